#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "kultur/eval.hpp"

using namespace kultur;

namespace {

GoldItem gold(std::string id, std::string lang, std::string target, std::vector<std::string> aliases = {}) {
  return {std::move(id), std::move(lang), std::move(target), std::move(aliases)};
}

// ASCII-only reference: lowercase, collapse blanks, trim.
std::string ascii_norm(const std::string& s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n') {
      pending = !out.empty();
      continue;
    }
    if (pending) out += ' ';
    pending = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::array<bool, 4> oracle_match(const std::string& pred, const GoldItem& g) {
  const auto p = ascii_norm(pred), t = ascii_norm(g.target);
  const bool exact = p == t;
  bool alias = false;
  for (const auto& a : g.aliases) alias = alias || (!ascii_norm(a).empty() && ascii_norm(a) == p);
  const bool contains = p.find(t) != std::string::npos;
  return {exact, exact || alias, exact || contains, exact || alias || contains};
}

struct Dataset {
  std::vector<GoldItem> golds;
  std::vector<Prediction> preds;
};

Dataset random_dataset(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"taj", "mahal", "agra", "modi", "narendra", "fort", "red", "Temple", "KYOTO", "gate"};
  auto phrase = [&](int max_words) {
    std::string s;
    for (int k = 0, n = 1 + static_cast<int>(rng() % static_cast<unsigned>(max_words)); k < n; ++k)
      s += (k ? (rng() % 4 ? " " : "  ") : (rng() % 5 ? "" : " ")) + words[rng() % words.size()];
    return s;
  };
  Dataset d;
  const std::size_t n = 1 + rng() % 40;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> aliases;
    for (int k = 0, m = static_cast<int>(rng() % 3); k < m; ++k) aliases.push_back(phrase(2));
    d.golds.push_back(gold("g" + std::to_string(i), rng() % 2 ? "en" : "hi", phrase(2), aliases));
    if (rng() % 6 == 0) continue;  // missing prediction
    std::string text;
    switch (rng() % 4) {
      case 0: text = d.golds.back().target; break;
      case 1: text = aliases.empty() ? phrase(3) : aliases[rng() % aliases.size()]; break;
      case 2: text = phrase(1) + " " + d.golds.back().target + " " + phrase(1); break;
      default: text = phrase(3);
    }
    d.preds.push_back({"g" + std::to_string(i), text});
  }
  std::shuffle(d.preds.begin(), d.preds.end(), rng);
  return d;
}

void expect_monotone(const LevelScores& s) {
  EXPECT_LE(s[MatchLevel::exact], s[MatchLevel::exact_alias]);
  EXPECT_LE(s[MatchLevel::exact], s[MatchLevel::exact_target_in_pred]);
  EXPECT_LE(s[MatchLevel::exact_alias], s[MatchLevel::all_methods]);
  EXPECT_LE(s[MatchLevel::exact_target_in_pred], s[MatchLevel::all_methods]);
  for (MatchLevel l : kMatchLevels) {
    EXPECT_GE(s[l], 0.0);
    EXPECT_LE(s[l], 1.0);
  }
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST(NormalizeText, WhitespaceCaseAndComposition) {
  EXPECT_EQ(normalize_text("  Taj   Mahal "), "taj mahal");
  EXPECT_EQ(normalize_text("MODI"), "modi");
  EXPECT_EQ(normalize_text("Kölner Dom"), normalize_text("Kölner Dom"));
  EXPECT_EQ(normalize_text("Café"), normalize_text("CAFÉ"));
  EXPECT_EQ(normalize_text("Ọ̀yọ́"), normalize_text("Ọ̀yọ́"));
  EXPECT_EQ(normalize_text("Shin-Nakagawa, Station!"), "shin-nakagawa, station!");
  EXPECT_EQ(normalize_text("\t\n"), "");
  for (const char* s : {"  Taj   Mahal ", "Kölner Dom", "Straße", "東京タワー"})
    EXPECT_EQ(normalize_text(normalize_text(s)), normalize_text(s)) << s;
}

TEST(MatchAt, AliasExample) {
  auto g = gold("1", "hi", "Narendra Modi", {"Modi", "Narendra Bhai", "NaMo"});
  Prediction p{"1", "Modi"};
  EXPECT_FALSE(match_at(MatchLevel::exact, p, g));
  EXPECT_TRUE(match_at(MatchLevel::exact_alias, p, g));
  EXPECT_FALSE(match_at(MatchLevel::exact_target_in_pred, p, g));
  EXPECT_TRUE(match_at(MatchLevel::all_methods, p, g));
  EXPECT_TRUE(match_at(MatchLevel::exact_alias, {"1", "  narendra   BHAI"}, g));
}

TEST(MatchAt, TargetInPredictionExample) {
  auto g = gold("1", "en", "Taj Mahal");
  Prediction p{"1", "The famous Taj Mahal monument in Agra"};
  EXPECT_FALSE(match_at(MatchLevel::exact, p, g));
  EXPECT_FALSE(match_at(MatchLevel::exact_alias, p, g));
  EXPECT_TRUE(match_at(MatchLevel::exact_target_in_pred, p, g));
  EXPECT_TRUE(match_at(MatchLevel::all_methods, p, g));
}

TEST(MatchAt, PredictionInsideTargetIsRejected) {
  auto g = gold("1", "en", "Taj Mahal");
  for (MatchLevel l : kMatchLevels) EXPECT_FALSE(match_at(l, {"1", "Taj"}, g)) << short_name(l);
  for (MatchLevel l : kMatchLevels) EXPECT_TRUE(match_at(l, {"1", "taj mahal"}, g)) << short_name(l);
}

TEST(MatchAt, EmptyAliasNeverMatchesEmptyPrediction) {
  auto g = gold("1", "en", "Taj Mahal", {"", "  "});
  for (MatchLevel l : kMatchLevels) EXPECT_FALSE(match_at(l, {"1", ""}, g)) << short_name(l);
}

TEST(ScorePredictions, HandScoredFourItemFixture) {
  std::vector<GoldItem> golds{gold("a", "en", "Taj Mahal"), gold("b", "en", "Kyoto"),
                              gold("c", "hi", "Narendra Modi", {"Modi", "Narendra Bhai"}), gold("d", "hi", "Red Fort")};
  std::vector<Prediction> preds{{"a", "taj mahal"}, {"b", " KYOTO "}, {"c", "Modi"}, {"d", "the red fort in delhi"}};
  auto r = score_predictions(preds, golds);
  EXPECT_EQ(r.n, 4u);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact], 0.50);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact_alias], 0.75);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact_target_in_pred], 0.75);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::all_methods], 1.00);
  EXPECT_DOUBLE_EQ(r.per_language.at("hi")[MatchLevel::exact], 0.0);
  EXPECT_DOUBLE_EQ(r.per_language.at("en")[MatchLevel::exact], 1.0);
}

TEST(ScorePredictions, EmptyAliasesCollapseAliasLevel) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    auto d = random_dataset(rng);
    for (auto& g : d.golds) g.aliases.clear();
    auto r = score_predictions(d.preds, d.golds);
    EXPECT_EQ(r.overall.hits[0], r.overall.hits[1]);
    EXPECT_EQ(r.overall.hits[2], r.overall.hits[3]);
  }
}

TEST(ScorePredictions, MatchesAsciiOracleAndIsMonotone) {
  std::mt19937_64 rng(2024);
  for (int iter = 0; iter < 1000; ++iter) {
    auto d = random_dataset(rng);
    auto r = score_predictions(d.preds, d.golds);
    std::map<std::string, std::string> text;
    for (const auto& p : d.preds) text[p.id] = p.text;
    std::array<std::size_t, 4> hits{};
    std::map<std::string, std::array<std::size_t, 5>> lang;  // 4 hit counters + n
    std::size_t missing = 0;
    for (const auto& g : d.golds) {
      auto it = text.find(g.id);
      std::array<bool, 4> m{};
      if (it == text.end())
        ++missing;
      else
        m = oracle_match(it->second, g);
      ++lang[g.language][4];
      for (std::size_t k = 0; k < 4; ++k) hits[k] += m[k], lang[g.language][k] += m[k];
    }
    ASSERT_EQ(r.overall.hits, hits) << iter;
    EXPECT_EQ(r.missing_predictions, missing);
    expect_monotone(r.overall);

    // Per-language partitions add back up to the overall counts.
    std::array<std::size_t, 4> sum{};
    std::size_t n = 0;
    for (const auto& [l, s] : r.per_language) {
      expect_monotone(s);
      EXPECT_EQ(s.n, lang.at(l)[4]);
      n += s.n;
      for (std::size_t k = 0; k < 4; ++k) {
        sum[k] += s.hits[k];
        EXPECT_EQ(s.hits[k], lang.at(l)[k]);
      }
    }
    EXPECT_EQ(n, r.n);
    EXPECT_EQ(sum, r.overall.hits);
  }
}

TEST(ScorePredictions, SelfScoreAndPreNormalizationInvariance) {
  std::mt19937_64 rng(99);
  for (int iter = 0; iter < 100; ++iter) {
    auto d = random_dataset(rng);
    std::vector<Prediction> self;
    for (const auto& g : d.golds) self.push_back({g.id, g.target});
    auto s = score_predictions(self, d.golds);
    for (MatchLevel l : kMatchLevels) EXPECT_DOUBLE_EQ(s.overall[l], 1.0);

    auto normalized = d;
    for (auto& p : normalized.preds) p.text = normalize_text(p.text);
    for (auto& g : normalized.golds) {
      g.target = normalize_text(g.target);
      for (auto& a : g.aliases) a = normalize_text(a);
    }
    EXPECT_EQ(score_predictions(d.preds, d.golds).overall.hits, score_predictions(normalized.preds, normalized.golds).overall.hits);
  }
}

TEST(ScorePredictions, DuplicatesThrowAndMissingCountAsMisses) {
  std::vector<GoldItem> golds{gold("a", "en", "Kyoto"), gold("b", "en", "Agra")};
  std::vector<Prediction> dup{{"a", "Kyoto"}, {"a", "Agra"}};
  EXPECT_THROW(score_predictions(dup, golds), DuplicatePrediction);
  std::vector<Prediction> one{{"a", "Kyoto"}};
  auto r = score_predictions(one, golds);
  EXPECT_EQ(r.missing_predictions, 1u);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::all_methods], 0.5);
  EXPECT_EQ(score_predictions(std::vector<Prediction>{}, std::vector<GoldItem>{}).n, 0u);
}

TEST(EvalFiles, ReadersTableAndJson) {
  TempDir dir("kultur_eval_files");
  {
    std::ofstream g(dir.path / "gold.jsonl");
    g << R"({"id":"a","language":"en","target":"Taj Mahal","aliases":["Tajmahal"]})" "\n\n"
      << R"({"id":"b","language":"ja","target":"金閣寺"})" "\n";
    std::ofstream p(dir.path / "pred.jsonl");
    p << R"({"id":"b","text":"京都の金閣寺"})" "\n" << R"({"id":"a","text":"tajmahal"})" "\n";
    std::ofstream bad(dir.path / "bad.jsonl");
    bad << R"({"id":"a","text":"x"})" "\n" << R"({"id":"b"})" "\n";
  }
  auto golds = read_gold_file(dir.path / "gold.jsonl");
  ASSERT_EQ(golds.size(), 2u);
  EXPECT_TRUE(golds[1].aliases.empty());
  auto preds = read_prediction_file(dir.path / "pred.jsonl");
  auto r = score_predictions(preds, golds);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact], 0.0);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact_alias], 0.5);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::exact_target_in_pred], 0.5);
  EXPECT_DOUBLE_EQ(r.overall[MatchLevel::all_methods], 1.0);

  try {
    read_prediction_file(dir.path / "bad.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos);
  }
  EXPECT_THROW(read_gold_file(dir.path / "absent.jsonl"), Error);

  auto table = render_score_table({{"sys-a", r}});
  for (MatchLevel l : kMatchLevels) EXPECT_NE(table.find(to_string(l)), std::string::npos);
  EXPECT_NE(table.find("100.00"), std::string::npos);
  EXPECT_NE(table.find("ja"), std::string::npos);
  auto j = score_report_to_json(r);
  EXPECT_EQ(j["n"], 2);
  EXPECT_DOUBLE_EQ(j["per_level"]["exact_alias"].get<double>(), 0.5);
  EXPECT_DOUBLE_EQ(j["per_language"]["ja"]["exact_target_in_pred"].get<double>(), 1.0);
}
