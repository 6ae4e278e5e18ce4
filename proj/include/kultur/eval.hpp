#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/text.hpp"

namespace kultur {

struct GoldItem {
  std::string id;
  LanguageCode language;
  std::string target;
  std::vector<std::string> aliases;
};

struct Prediction {
  std::string id;
  std::string text;
};

enum class MatchLevel { exact, exact_alias, exact_target_in_pred, all_methods };

inline constexpr std::array<MatchLevel, 4> kMatchLevels{MatchLevel::exact, MatchLevel::exact_alias,
                                                        MatchLevel::exact_target_in_pred, MatchLevel::all_methods};

inline const char* to_string(MatchLevel l) {
  switch (l) {
    case MatchLevel::exact: return "Exact Match";
    case MatchLevel::exact_alias: return "Exact Match + Alias";
    case MatchLevel::exact_target_in_pred: return "Exact Match + Target in Prediction";
    case MatchLevel::all_methods: return "Exact Match + Alias + Target in Prediction";
  }
  return "?";
}

inline const char* short_name(MatchLevel l) {
  switch (l) {
    case MatchLevel::exact: return "exact";
    case MatchLevel::exact_alias: return "exact_alias";
    case MatchLevel::exact_target_in_pred: return "exact_target_in_pred";
    case MatchLevel::all_methods: return "all_methods";
  }
  return "?";
}

namespace detail {

struct NormalizedGold {
  std::string target;
  std::vector<std::string> aliases;
};

inline NormalizedGold normalize_gold(const GoldItem& g) {
  NormalizedGold n{normalize_text(g.target), {}};
  for (const auto& a : g.aliases) n.aliases.push_back(normalize_text(a));
  return n;
}

inline bool match_normalized(MatchLevel level, const std::string& pred, const NormalizedGold& gold) {
  const bool exact = pred == gold.target;
  auto alias = [&] {
    for (const auto& a : gold.aliases)
      if (!a.empty() && pred == a) return true;
    return false;
  };
  // Only the target inside the prediction counts, never the reverse.
  auto target_in_pred = [&] { return !gold.target.empty() && pred.find(gold.target) != std::string::npos; };
  switch (level) {
    case MatchLevel::exact: return exact;
    case MatchLevel::exact_alias: return exact || alias();
    case MatchLevel::exact_target_in_pred: return exact || target_in_pred();
    case MatchLevel::all_methods: return exact || alias() || target_in_pred();
  }
  return false;
}

}  // namespace detail

inline bool match_at(MatchLevel level, const Prediction& pred, const GoldItem& gold) {
  return detail::match_normalized(level, normalize_text(pred.text), detail::normalize_gold(gold));
}

struct LevelScores {
  std::array<double, 4> accuracy{};
  std::array<std::size_t, 4> hits{};
  std::size_t n = 0;

  double operator[](MatchLevel l) const { return accuracy[static_cast<std::size_t>(l)]; }
};

struct ScoreReport {
  LevelScores overall;
  std::map<LanguageCode, LevelScores> per_language;
  std::size_t n = 0;
  std::size_t missing_predictions = 0;
};

struct DuplicatePrediction : Error {
  using Error::Error;
};

// Accuracy over golds; golds without a prediction count as misses.
inline ScoreReport score_predictions(std::span<const Prediction> preds, std::span<const GoldItem> golds) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds)
    if (!by_id.emplace(p.id, &p).second) throw DuplicatePrediction("duplicate prediction id '" + p.id + "'");
  ScoreReport report;
  auto tally = [](LevelScores& s, const std::array<bool, 4>& m) {
    ++s.n;
    for (std::size_t i = 0; i < 4; ++i) s.hits[i] += m[i] ? 1 : 0;
  };
  for (const auto& g : golds) {
    std::array<bool, 4> m{};
    auto it = by_id.find(g.id);
    if (it == by_id.end()) {
      ++report.missing_predictions;
    } else {
      std::string pred = normalize_text(it->second->text);
      auto gold = detail::normalize_gold(g);
      for (std::size_t i = 0; i < 4; ++i) m[i] = detail::match_normalized(kMatchLevels[i], pred, gold);
    }
    tally(report.overall, m);
    tally(report.per_language[g.language], m);
  }
  auto finish = [](LevelScores& s) {
    for (std::size_t i = 0; i < 4; ++i) s.accuracy[i] = s.n ? static_cast<double>(s.hits[i]) / static_cast<double>(s.n) : 0.0;
  };
  finish(report.overall);
  for (auto& [lang, s] : report.per_language) finish(s);
  report.n = report.overall.n;
  return report;
}

// ---------------------------------------------------------------------------
// Files: one JSON object per line.
//   gold: {"id", "language", "target", "aliases": [...]}
//   predictions: {"id", "text"}

inline std::vector<GoldItem> read_gold_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open gold file " + path.string());
  std::vector<GoldItem> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw Error("malformed JSON");
      GoldItem g{j.at("id").get<std::string>(), j.at("language").get<std::string>(), j.at("target").get<std::string>(),
                 j.value("aliases", std::vector<std::string>{})};
      if (g.target.empty()) throw Error("empty target");
      out.push_back(std::move(g));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<Prediction> read_prediction_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open prediction file " + path.string());
  std::vector<Prediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    try {
      if (j.is_discarded()) throw Error("malformed JSON");
      out.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>()});
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// One block per level; rows are systems, columns are languages plus Avg.
inline std::string render_score_table(const std::map<std::string, ScoreReport>& systems) {
  std::vector<LanguageCode> langs;
  for (const auto& [name, r] : systems)
    for (const auto& [lang, s] : r.per_language)
      if (std::find(langs.begin(), langs.end(), lang) == langs.end()) langs.push_back(lang);
  std::sort(langs.begin(), langs.end());
  std::ostringstream out;
  char buf[64];
  for (MatchLevel level : kMatchLevels) {
    out << to_string(level) << '\n';
    std::snprintf(buf, sizeof buf, "%-28s", "System");
    out << buf;
    for (const auto& l : langs) {
      std::snprintf(buf, sizeof buf, " %8s", l.c_str());
      out << buf;
    }
    out << "      Avg\n";
    for (const auto& [name, r] : systems) {
      std::snprintf(buf, sizeof buf, "%-28s", name.c_str());
      out << buf;
      for (const auto& l : langs) {
        auto it = r.per_language.find(l);
        if (it == r.per_language.end())
          std::snprintf(buf, sizeof buf, " %8s", "-");
        else
          std::snprintf(buf, sizeof buf, " %8.2f", 100.0 * it->second[level]);
        out << buf;
      }
      std::snprintf(buf, sizeof buf, " %8.2f\n", 100.0 * r.overall[level]);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json score_report_to_json(const ScoreReport& r) {
  auto levels = [](const LevelScores& s) {
    nlohmann::json j = nlohmann::json::object();
    for (MatchLevel l : kMatchLevels) j[short_name(l)] = s[l];
    return j;
  };
  nlohmann::json per_lang = nlohmann::json::object();
  for (const auto& [lang, s] : r.per_language) per_lang[lang] = levels(s);
  return {{"n", r.n}, {"missing_predictions", r.missing_predictions}, {"per_level", levels(r.overall)}, {"per_language", per_lang}};
}

}  // namespace kultur
