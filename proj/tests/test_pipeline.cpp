#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "kultur/kultur.hpp"
#include "support/synthetic.hpp"

using namespace kultur;
namespace fs = std::filesystem;

namespace {

const fs::path kFixture = KULTUR_FIXTURE_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

PipelineServices no_live_services() {
  PipelineServices s;
  s.make_model = [](const std::string& name, const ClientSpec&) -> std::unique_ptr<ModelClient> {
    ADD_FAILURE() << "replay run constructed live client " << name;
    return nullptr;
  };
  return s;
}

PipelineConfig fixture_config(const fs::path& workdir) {
  auto cfg = load_pipeline_config(kFixture / "config.json");
  cfg.workdir = workdir;
  return cfg;
}

std::string slurp(const fs::path& p) { return synth::oracle::slurp(p.string()); }

std::vector<DatasetRecord> records_of(const fs::path& p) {
  std::ifstream in(p);
  auto f = read_records(in);
  EXPECT_TRUE(f.diagnostics.empty()) << p;
  return f.records;
}

std::vector<nlohmann::json> jsonl_of(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

// Every artifact of a complete replay run, shared by the read-only tests.
class FixtureRun : public ::testing::Test {
 protected:
  static inline TempDir* dir = nullptr;
  static inline nlohmann::json result;

  static void SetUpTestSuite() {
    dir = new TempDir("kultur_pipeline_fixture");
    PipelineRunner runner(fixture_config(dir->path), no_live_services());
    result = runner.run_all();
  }
  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }
  static fs::path file(const char* name) { return dir->path / name; }
};

}  // namespace

TEST_F(FixtureRun, EveryStageReportsCountsAndNoLiveCalls) {
  const auto& stages = result["stages"];
  ASSERT_EQ(stages.size(), kPipelineStages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    EXPECT_EQ(stages[i]["stage"], to_string(kPipelineStages[i]));
    for (const char* k : {"inputs", "outputs", "rejects"}) EXPECT_TRUE(stages[i].contains(k)) << stages[i]["stage"] << k;
  }
  for (const char* stage : {"mcq", "refine"}) {
    auto it = std::find_if(stages.begin(), stages.end(), [&](const auto& s) { return s["stage"] == stage; });
    ASSERT_NE(it, stages.end());
    const auto& gw = (*it)["gateway"];
    for (const auto& [kind, counters] : gw.items())
      if (counters.is_object() && counters.contains("live_calls")) {
        EXPECT_EQ(counters["live_calls"], 0) << stage << kind;
      }
    if (gw.contains("live_calls")) {
      EXPECT_EQ(gw["live_calls"], 0) << stage;
    }
  }
  EXPECT_GT(records_of(file(files::kSampled)).size(), 0u);
}

TEST_F(FixtureRun, SelectionEqualsTripleScanOracle) {
  std::vector<nlohmann::json> docs;
  std::size_t broken = 0;  // the fixture carries a deliberately damaged line
  std::ifstream in(kFixture / "dump.jsonl");
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == ',' || line.back() == '\r')) line.pop_back();
    if (line.empty() || line == "[" || line == "]") continue;
    auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) {
      ++broken;
      continue;
    }
    docs.push_back(std::move(doc));
  }
  EXPECT_EQ(result["stages"][0]["rejects"], broken);
  auto cfg = fixture_config(dir->path);
  auto expected = synth::oracle::triple_scan_selection(docs, cfg.selection);
  std::set<std::string> got;
  for (const auto& row : jsonl_of(file(files::kSelected))) got.insert(row["entity"]["id"].get<std::string>());
  EXPECT_EQ(got, expected);
  EXPECT_EQ(result["stages"][0]["outputs"], expected.size());
}

TEST_F(FixtureRun, RetentionHoldsPerBucket) {
  struct Tally {
    std::size_t templated = 0, refined = 0, filtered = 0;
  };
  std::map<std::pair<std::string, std::string>, Tally> buckets;
  auto key = [](const DatasetRecord& r) { return std::make_pair(r.region.str(), r.language); };
  for (const auto& r : records_of(file(files::kTemplated))) ++buckets[key(r)].templated;
  for (const char* f : {files::kRefined, files::kMcq})
    for (const auto& r : records_of(file(f))) ++buckets[key(r)].refined;
  for (const auto& r : records_of(file(files::kFiltered))) ++buckets[key(r)].filtered;
  ASSERT_GT(buckets.size(), 3u);
  for (const auto& [k, t] : buckets) {
    EXPECT_LE(t.filtered, t.refined) << k.first << "/" << k.second;
    EXPECT_LE(t.refined, t.templated) << k.first << "/" << k.second;
  }
  // Sampled records come from the filtered set.
  std::set<std::string> filtered_ids;
  for (const auto& r : records_of(file(files::kFiltered))) filtered_ids.insert(r.id);
  for (const auto& r : records_of(file(files::kSampled))) EXPECT_TRUE(filtered_ids.count(r.id)) << r.id;
}

TEST_F(FixtureRun, ManifestReconcilesWithRecomputedStats) {
  std::vector<DatasetRecord> all;
  for (const char* f : {files::kTemplated, files::kRefined, files::kMcq, files::kFiltered}) {
    auto part = records_of(file(f));
    all.insert(all.end(), part.begin(), part.end());
  }
  std::vector<Entity> entities;
  for (const auto& row : jsonl_of(file(files::kSelected))) entities.push_back(entity_from_json(row["entity"]));
  auto recomputed = stats_to_json(compute_stats(all, entities));
  auto on_disk = nlohmann::json::parse(slurp(file(files::kStatsJson)));
  EXPECT_EQ(on_disk, recomputed);

  auto manifest = nlohmann::json::parse(slurp(file(files::kManifest)));
  EXPECT_EQ(manifest, result["manifest"]);
  std::map<std::string, std::array<std::size_t, 5>> by_region;
  for (const auto& b : manifest["buckets"]) {
    auto& v = by_region[b["region"].get<std::string>()];
    std::size_t i = 0;
    for (const char* k : {"templated", "open_ended", "mcq", "open_ended_filtered", "mcq_filtered"}) v[i++] += b[k].get<std::size_t>();
  }
  ASSERT_EQ(by_region.size(), recomputed["per_region"].size());
  for (const auto& [region, v] : by_region) {
    std::size_t i = 0;
    for (const char* col : {"Template QA", "Open-Ended", "MCQ", "Open-Ended_F", "MCQ_F"})
      EXPECT_EQ(recomputed["per_region"][region][col], v[i++]) << region << " " << col;
  }

  // Record counts and hashes listed for every artifact match the files.
  for (const auto& a : manifest["artifacts"]) {
    auto content = slurp(file(a["file"].get<std::string>().c_str()));
    EXPECT_EQ(a["bytes"], content.size());
    EXPECT_EQ(a["fnv1a64"], StableHasher().add(content).hex());
    if (a.contains("records")) {
      EXPECT_EQ(a["records"], static_cast<std::size_t>(std::count(content.begin(), content.end(), '\n')));
    }
  }
  EXPECT_EQ(manifest["artifacts"].size(), 14u);
}

TEST_F(FixtureRun, NoLeakageSurvivesRefine) {
  std::map<std::string, Entity> entities;
  for (const auto& row : jsonl_of(file(files::kSelected))) {
    auto e = entity_from_json(row["entity"]);
    entities.emplace(e.id.str(), e);
  }
  std::size_t checked = 0;
  for (const char* f : {files::kRefined, files::kFiltered, files::kSampled})
    for (const auto& r : records_of(file(f))) {
      if (r.kind == RecordKind::truefalse) continue;
      EXPECT_FALSE(leakage_check(r.question, entities.at(r.entity_id.str()), r.language)) << f << " " << r.id;
      ++checked;
    }
  EXPECT_GT(checked, 0u);
  // The leaking stub client is routed for one bucket, so the check did fire.
  std::size_t leaks = 0;
  for (const auto& row : jsonl_of(file(files::kRefineRejects))) leaks += row["reason"] == "leakage";
  EXPECT_GT(leaks, 0u);
}

TEST_F(FixtureRun, RerunIsIdempotentAndSecondWorkdirIsIdentical) {
  TempDir other("kultur_pipeline_fixture_b");
  PipelineRunner b(fixture_config(other.path), no_live_services());
  auto second = b.run_all();
  EXPECT_EQ(second["manifest"], result["manifest"]);
  for (const auto& a : result["manifest"]["artifacts"]) {
    const auto name = a["file"].get<std::string>();
    EXPECT_EQ(slurp(other.path / name), slurp(file(name.c_str()))) << name;
  }
  // Rerunning in place leaves the manifest hashes unchanged.
  PipelineRunner again(fixture_config(other.path), no_live_services());
  EXPECT_EQ(again.run_all()["manifest"], result["manifest"]);
}

TEST_F(FixtureRun, SampleIsSeedDeterministic) {
  TempDir copy("kultur_pipeline_sample");
  fs::create_directories(copy.path);
  for (const auto& e : fs::directory_iterator(dir->path)) fs::copy_file(e.path(), copy.path / e.path().filename());
  auto run_sample = [&](std::uint64_t seed) {
    auto cfg = fixture_config(copy.path);
    cfg.sampling.seed = seed;
    PipelineRunner(cfg, no_live_services()).run(StageName::sample);
    return slurp(copy.path / files::kSampled) + slurp(copy.path / files::kSamplingPlan);
  };
  auto a = run_sample(7), b = run_sample(7), c = run_sample(8);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, slurp(file(files::kSampled)) + slurp(file(files::kSamplingPlan)));
  EXPECT_NE(a, c);
}

TEST_F(FixtureRun, CorruptedIntermediateNamesStageAndLine) {
  TempDir copy("kultur_pipeline_corrupt");
  fs::create_directories(copy.path);
  for (const auto& e : fs::directory_iterator(dir->path)) fs::copy_file(e.path(), copy.path / e.path().filename());
  auto text = slurp(copy.path / files::kTemplated);
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
  text.insert(pos, "{\"id\": broken");
  std::ofstream(copy.path / files::kTemplated, std::ios::trunc) << text;
  try {
    PipelineRunner(fixture_config(copy.path), no_live_services()).run(StageName::refine);
    FAIL() << "corrupt input accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage, "refine");
    EXPECT_EQ(e.kind, StageError::Kind::corrupt_input);
    EXPECT_EQ(exit_code(e.kind), 4);
    EXPECT_NE(std::string(e.what()).find("templated.jsonl:3"), std::string::npos) << e.what();
  }
}

TEST_F(FixtureRun, IncompleteReplayStoreFailsTheStage) {
  TempDir copy("kultur_pipeline_miss");
  fs::create_directories(copy.path);
  auto store = slurp(kFixture / "model_replay.jsonl");
  store.resize(store.size() / 2);
  store.resize(store.rfind('\n') + 1);
  std::ofstream(copy.path / "half.jsonl") << store;
  for (const auto& e : fs::directory_iterator(dir->path)) fs::copy_file(e.path(), copy.path / e.path().filename());
  auto cfg = fixture_config(copy.path);
  cfg.model_store = copy.path / "half.jsonl";
  try {
    PipelineRunner(cfg, no_live_services()).run(StageName::filter);
    FAIL() << "replay misses ignored";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage, "filter");
    EXPECT_NE(std::string(e.what()).find("replay misses"), std::string::npos) << e.what();
  }
}

TEST_F(FixtureRun, FullDumpStatsAddIncomingHistogram) {
  TempDir copy("kultur_pipeline_fulldump");
  fs::create_directories(copy.path);
  for (const auto& e : fs::directory_iterator(dir->path)) fs::copy_file(e.path(), copy.path / e.path().filename());
  auto cfg = fixture_config(copy.path);
  cfg.stats_full_dump = true;
  PipelineRunner(cfg, no_live_services()).run(StageName::stats);
  auto stats = nlohmann::json::parse(slurp(copy.path / files::kStatsJson));
  ASSERT_TRUE(stats.contains("connectivity_incoming"));
  std::size_t total = 0;
  for (const auto& [k, v] : stats["connectivity_incoming"].items()) total += v.get<std::size_t>();
  EXPECT_EQ(total, jsonl_of(file(files::kSelected)).size());
  EXPECT_EQ(stats["connectivity_incoming"]["1"], 3);
  // The default run leaves the column out and the manifest still reconciles.
  EXPECT_FALSE(nlohmann::json::parse(slurp(file(files::kStatsJson))).contains("connectivity_incoming"));
  EXPECT_NO_THROW(PipelineRunner(cfg, no_live_services()).write_manifest());
}

TEST(PipelineErrors, MissingInputAndInvalidConfig) {
  TempDir empty("kultur_pipeline_empty");
  for (StageName s : {StageName::images, StageName::generate, StageName::refine, StageName::sample, StageName::stats}) {
    try {
      PipelineRunner(fixture_config(empty.path), no_live_services()).run(s);
      FAIL() << to_string(s);
    } catch (const StageError& e) {
      EXPECT_EQ(e.kind, StageError::Kind::missing_input) << e.what();
      EXPECT_EQ(exit_code(e.kind), 2);
      EXPECT_EQ(e.stage, to_string(s));
    }
  }
  auto cfg = fixture_config(empty.path);
  cfg.sampling.t_region = 0;
  try {
    PipelineRunner(cfg, no_live_services()).run(StageName::sample);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind, StageError::Kind::config_invalid);
    EXPECT_EQ(exit_code(e.kind), 3);
  }
  auto missing_dump = fixture_config(empty.path);
  missing_dump.dump = empty.path / "nope.jsonl";
  try {
    PipelineRunner(missing_dump, no_live_services()).run(StageName::select);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.kind, StageError::Kind::missing_input);
  }
}

TEST(PipelineConfigFile, OverridesAndValidation) {
  auto cfg = load_pipeline_config(kFixture / "config.json");
  EXPECT_DOUBLE_EQ(cfg.sampling.t_region, 4.0);
  EXPECT_DOUBLE_EQ(cfg.sampling.t_lang, 1.5);
  EXPECT_EQ(cfg.dump, kFixture / "dump.jsonl");
  EXPECT_FALSE(cfg.stats_full_dump);

  ConfigOverrides o;
  o.seed = 11;
  o.budget = 5;
  o.t_region = 2.0;
  o.replay = "/tmp/commons.jsonl";
  auto images = cfg;
  apply_overrides(images, o, StageName::images);
  EXPECT_EQ(images.commons_store, "/tmp/commons.jsonl");
  EXPECT_EQ(images.model_store, cfg.model_store);
  EXPECT_EQ(images.sampling.seed, 11u);
  EXPECT_EQ(images.sampling.budget, 5u);
  o.replay.reset();
  o.record = "/tmp/model.jsonl";
  auto refine = cfg;
  apply_overrides(refine, o, StageName::refine);
  EXPECT_EQ(refine.gateway.mode, GatewayMode::record);
  EXPECT_EQ(refine.model_store, "/tmp/model.jsonl");
  o.replay = "/tmp/x.jsonl";
  EXPECT_THROW(apply_overrides(refine, o, StageName::refine), ConfigError);

  auto j = nlohmann::json::parse(slurp(kFixture / "config.json"));
  j["gateway"]["default_client"] = "nobody";
  EXPECT_THROW(pipeline_config_from_json(j), ConfigError);
  j = nlohmann::json::parse(slurp(kFixture / "config.json"));
  j["stats"] = {{"full_dump", true}};
  EXPECT_TRUE(pipeline_config_from_json(j).stats_full_dump);
}

TEST(RunEval, WritesReportsAndClassifiesErrors) {
  TempDir dir("kultur_pipeline_eval");
  fs::create_directories(dir.path);
  std::ofstream(dir.path / "gold.jsonl") << R"({"id":"1","language":"hi","target":"Narendra Modi","aliases":["Modi"]})" "\n";
  std::ofstream(dir.path / "a.jsonl") << R"({"id":"1","text":"Modi"})" "\n";
  std::ofstream(dir.path / "dup.jsonl") << R"({"id":"1","text":"Modi"})" "\n" << R"({"id":"1","text":"x"})" "\n";
  auto out = run_eval({dir.path / "gold.jsonl", {{"a", dir.path / "a.jsonl"}}, dir.path / "report"});
  EXPECT_DOUBLE_EQ(out.reports.at("a").overall[MatchLevel::exact_alias], 1.0);
  auto j = nlohmann::json::parse(slurp(dir.path / "report" / "eval_report.json"));
  EXPECT_DOUBLE_EQ(j["a"]["per_level"]["exact"].get<double>(), 0.0);
  EXPECT_EQ(slurp(dir.path / "report" / "eval_report.txt"), out.table);

  auto kind_of = [&](EvalInputs in) {
    try {
      run_eval(in);
    } catch (const StageError& e) {
      return e.kind;
    }
    return StageError::Kind::failure;
  };
  EXPECT_EQ(kind_of({dir.path / "none.jsonl", {{"a", dir.path / "a.jsonl"}}, {}}), StageError::Kind::missing_input);
  EXPECT_EQ(kind_of({dir.path / "gold.jsonl", {{"a", dir.path / "none.jsonl"}}, {}}), StageError::Kind::missing_input);
  EXPECT_EQ(kind_of({dir.path / "gold.jsonl", {{"d", dir.path / "dup.jsonl"}}, {}}), StageError::Kind::invariant_violation);
  EXPECT_EQ(kind_of({dir.path / "gold.jsonl", {}, {}}), StageError::Kind::config_invalid);
}
