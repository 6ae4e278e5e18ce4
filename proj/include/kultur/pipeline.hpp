#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "kultur/eval.hpp"
#include "kultur/gateway.hpp"
#include "kultur/images.hpp"
#include "kultur/kg.hpp"
#include "kultur/qa.hpp"
#include "kultur/records.hpp"
#include "kultur/sampling.hpp"
#include "kultur/scripted_client.hpp"
#include "kultur/select.hpp"
#include "kultur/stats.hpp"

namespace kultur {

namespace fs = std::filesystem;

enum class StageName { select, images, generate, mcq, refine, filter, sample, stats, eval };

inline constexpr std::array<StageName, 8> kPipelineStages{StageName::select, StageName::images, StageName::generate,
                                                          StageName::mcq,    StageName::refine, StageName::filter,
                                                          StageName::sample, StageName::stats};

inline const char* to_string(StageName s) {
  switch (s) {
    case StageName::select: return "select";
    case StageName::images: return "images";
    case StageName::generate: return "generate";
    case StageName::mcq: return "mcq";
    case StageName::refine: return "refine";
    case StageName::filter: return "filter";
    case StageName::sample: return "sample";
    case StageName::stats: return "stats";
    case StageName::eval: return "eval";
  }
  return "?";
}

struct StageError : Error {
  enum class Kind { missing_input, config_invalid, invariant_violation, corrupt_input, failure };
  StageError(std::string stage_name, Kind k, const std::string& what)
      : Error(stage_name + ": " + what), stage(std::move(stage_name)), kind(k) {}
  std::string stage;
  Kind kind;
};

inline int exit_code(StageError::Kind k) {
  switch (k) {
    case StageError::Kind::missing_input: return 2;
    case StageError::Kind::config_invalid: return 3;
    case StageError::Kind::invariant_violation:
    case StageError::Kind::corrupt_input: return 4;
    case StageError::Kind::failure: return 1;
  }
  return 1;
}

// Workdir layout. Every stage reads the files of earlier stages only.
namespace files {
inline constexpr const char* kSelected = "selected.jsonl";
inline constexpr const char* kLabels = "labels.jsonl";
inline constexpr const char* kImages = "images.json";
inline constexpr const char* kTemplated = "templated.jsonl";
inline constexpr const char* kMcq = "mcq.jsonl";
inline constexpr const char* kMcqRejects = "mcq_rejects.jsonl";
inline constexpr const char* kRefined = "refined.jsonl";
inline constexpr const char* kRefineRejects = "refine_rejects.jsonl";
inline constexpr const char* kFiltered = "filtered.jsonl";
inline constexpr const char* kFilterRejects = "filter_rejects.jsonl";
inline constexpr const char* kSampled = "sampled.jsonl";
inline constexpr const char* kSamplingPlan = "sampling_plan.json";
inline constexpr const char* kStatsJson = "stats.json";
inline constexpr const char* kStatsText = "stats.txt";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace files

// ---------------------------------------------------------------------------
// Configuration

struct ClientSpec {
  std::string type = "scripted";  // scripted | chat
  nlohmann::json params = nlohmann::json::object();
};

struct ImageStageConfig {
  int max_per_entity = 3;
  GatewayMode mode = GatewayMode::replay;
  int max_in_flight = 4;
  std::string api_url = "https://commons.wikimedia.org/w/api.php";
  std::string user_agent = "kultur/0.1 (dataset tooling)";
};

struct SamplingConfig {
  double t_region = 4.0;
  double t_lang = 1.5;
  std::size_t budget = 1000;
  std::uint64_t seed = 0;
};

struct PipelineConfig {
  SelectionConfig selection;
  std::map<LanguageCode, std::string> language_names;
  fs::path dump, templates, workdir, commons_store, model_store;
  ImageStageConfig images;
  GatewayPolicy gateway;
  std::map<std::string, ClientSpec> clients;
  RoutingTable routes;        // refine, mcq, truefalse
  RoutingTable judge_routes;  // both filters
  double mcq_fraction = 0.5;  // share of templated records turned into MCQ/TF instead of refined
  double tf_fraction = 0.4;   // share of those that become true/false items
  SamplingConfig sampling;
  bool stats_full_dump = false;  // incoming-link histogram; streams the whole dump again

  std::string language_name(const LanguageCode& lang) const {
    auto it = language_names.find(lang);
    return it == language_names.end() ? lang : it->second;
  }

  std::string region_name(const EntityId& qid) const {
    const RegionSpec* r = selection.region(qid);
    return r ? r->display_name : qid.str();
  }

  void validate() const {
    selection.validate();
    gateway.validate();
    if (!(sampling.t_region > 0) || !(sampling.t_lang > 0)) throw ConfigError("sampling temperatures must be positive");
    if (!(mcq_fraction >= 0 && mcq_fraction <= 1) || !(tf_fraction >= 0 && tf_fraction <= 1))
      throw ConfigError("generation fractions must lie in [0, 1]");
    if (images.max_per_entity < 1) throw ConfigError("images.max_per_entity must be >= 1");
    if (images.max_in_flight < 1) throw ConfigError("images.max_in_flight must be >= 1");
    if (workdir.empty()) throw ConfigError("no workdir configured");
  }
};

// Relative paths resolve against `base_dir` (the config file's directory).
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  PipelineConfig cfg;
  auto path_of = [&](const nlohmann::json& obj, const char* key) -> fs::path {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return {};
    fs::path p = it->get<std::string>();
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  };
  try {
    cfg.selection = selection_config_from_json(j.at("selection"));
    if (auto it = j.find("language_names"); it != j.end())
      cfg.language_names = it->get<std::map<std::string, std::string>>();
    const auto& paths = j.value("paths", nlohmann::json::object());
    cfg.dump = path_of(paths, "dump");
    cfg.templates = path_of(paths, "templates");
    cfg.workdir = path_of(paths, "workdir");
    cfg.commons_store = path_of(paths, "commons_store");
    cfg.model_store = path_of(paths, "model_store");

    const auto& img = j.value("images", nlohmann::json::object());
    cfg.images.max_per_entity = img.value("max_per_entity", cfg.images.max_per_entity);
    cfg.images.mode = gateway_mode_from_string(img.value("mode", std::string("replay")));
    cfg.images.max_in_flight = img.value("max_in_flight", cfg.images.max_in_flight);
    cfg.images.api_url = img.value("api_url", cfg.images.api_url);
    cfg.images.user_agent = img.value("user_agent", cfg.images.user_agent);

    const auto& gw = j.value("gateway", nlohmann::json::object());
    cfg.gateway.mode = gateway_mode_from_string(gw.value("mode", std::string("replay")));
    cfg.gateway.max_in_flight = gw.value("max_in_flight", cfg.gateway.max_in_flight);
    cfg.gateway.max_retries = gw.value("max_retries", cfg.gateway.max_retries);
    cfg.gateway.backoff_initial = std::chrono::milliseconds(gw.value("backoff_initial_ms", 500));
    cfg.gateway.backoff_multiplier = gw.value("backoff_multiplier", cfg.gateway.backoff_multiplier);
    const auto clients = gw.value("clients", nlohmann::json::object());
    for (const auto& [name, spec] : clients.items()) {
      ClientSpec c;
      c.type = spec.value("type", std::string("scripted"));
      if (c.type != "scripted" && c.type != "chat") throw ConfigError("client '" + name + "': unknown type '" + c.type + "'");
      c.params = spec;
      cfg.clients[name] = std::move(c);
    }
    auto known = [&](const std::string& name) {
      if (!cfg.clients.count(name)) throw ConfigError("route names unknown client '" + name + "'");
      return name;
    };
    auto load_routes = [&](RoutingTable& table, const char* routes_key, const char* default_key) {
      if (auto d = gw.find(default_key); d != gw.end()) table.set_default(known(d->get<std::string>()));
      for (const auto& r : gw.value(routes_key, nlohmann::json::array()))
        table.add(r.value("region", "*"), r.value("language", "*"), known(r.at("client").get<std::string>()));
    };
    load_routes(cfg.routes, "routes", "default_client");
    if (gw.contains("default_judge") || gw.contains("judge_routes"))
      load_routes(cfg.judge_routes, "judge_routes", "default_judge");
    else
      load_routes(cfg.judge_routes, "routes", "default_client");

    const auto& gen = j.value("generation", nlohmann::json::object());
    cfg.mcq_fraction = gen.value("mcq_fraction", cfg.mcq_fraction);
    cfg.tf_fraction = gen.value("tf_fraction", cfg.tf_fraction);

    const auto& smp = j.value("sampling", nlohmann::json::object());
    cfg.sampling.t_region = smp.value("t_region", cfg.sampling.t_region);
    cfg.sampling.t_lang = smp.value("t_lang", cfg.sampling.t_lang);
    cfg.sampling.budget = smp.value("budget", cfg.sampling.budget);
    cfg.sampling.seed = smp.value("seed", cfg.sampling.seed);

    const auto& st = j.value("stats", nlohmann::json::object());
    cfg.stats_full_dump = st.value("full_dump", cfg.stats_full_dump);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path.string() + ": malformed JSON");
  return pipeline_config_from_json(j, path.parent_path());
}

// Command-line overrides; unset fields keep the config value.
struct ConfigOverrides {
  std::optional<fs::path> workdir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> budget;
  std::optional<double> t_region, t_lang;
  std::optional<fs::path> replay;  // replay store; switches the stage's external service to replay
  std::optional<fs::path> record;  // replay store to append to; switches to record mode
  std::optional<bool> full_dump;
};

inline void apply_overrides(PipelineConfig& cfg, const ConfigOverrides& o, StageName stage) {
  if (o.replay && o.record) throw ConfigError("--replay and --record are mutually exclusive");
  if (o.workdir) cfg.workdir = *o.workdir;
  if (o.seed) cfg.sampling.seed = *o.seed;
  if (o.budget) cfg.sampling.budget = *o.budget;
  if (o.t_region) cfg.sampling.t_region = *o.t_region;
  if (o.t_lang) cfg.sampling.t_lang = *o.t_lang;
  if (o.full_dump) cfg.stats_full_dump = *o.full_dump;
  if (o.replay || o.record) {
    GatewayMode mode = o.replay ? GatewayMode::replay : GatewayMode::record;
    const fs::path& store = o.replay ? *o.replay : *o.record;
    if (stage == StageName::images) {
      cfg.images.mode = mode;
      cfg.commons_store = store;
    } else {
      cfg.gateway.mode = mode;
      cfg.model_store = store;
    }
  }
}

// ---------------------------------------------------------------------------
// External services

using ModelClientFactory = std::function<std::unique_ptr<ModelClient>(const std::string& name, const ClientSpec&)>;
using CommonsClientFactory = std::function<std::unique_ptr<CommonsClient>(const ImageStageConfig&)>;

inline std::unique_ptr<ModelClient> make_offline_model_client(const std::string& name, const ClientSpec& spec) {
  if (spec.type == "scripted") {
    ScriptedBehavior b;
    b.leak_every = spec.params.value("leak_every", b.leak_every);
    b.malformed_every = spec.params.value("malformed_every", b.malformed_every);
    b.reject_every = spec.params.value("reject_every", b.reject_every);
    return std::make_unique<ScriptedModelClient>(b);
  }
  throw ConfigError("client '" + name + "' of type '" + spec.type + "' needs a network-enabled build");
}

struct PipelineServices {
  ModelClientFactory make_model = make_offline_model_client;
  CommonsClientFactory make_commons;  // live commons access; unset means unavailable
  Gateway::Sleeper sleeper;
};

// ---------------------------------------------------------------------------
// Stage file helpers

namespace detail {

inline void require_file(const std::string& stage, const fs::path& p, const char* what) {
  if (p.empty()) throw StageError(stage, StageError::Kind::config_invalid, std::string("no ") + what + " path configured");
  if (!fs::exists(p)) throw StageError(stage, StageError::Kind::missing_input, std::string(what) + " not found: " + p.string());
}

// Writes through a temporary file so a crashed stage never leaves a
// half-written output behind.
template <class WriteFn>
void write_atomically(const fs::path& path, WriteFn&& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + tmp.string());
    write(out);
    out.flush();
    if (!out) throw IoError("write failure on " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline void write_json_file(const fs::path& path, const nlohmann::json& j) {
  write_atomically(path, [&](std::ostream& out) { out << j.dump(2) << '\n'; });
}

inline void write_record_file(const fs::path& path, std::span<const DatasetRecord> records) {
  write_atomically(path, [&](std::ostream& out) { write_records(records, out); });
}

inline void write_jsonl(const fs::path& path, const std::vector<nlohmann::json>& rows) {
  write_atomically(path, [&](std::ostream& out) {
    for (const auto& r : rows) out << r.dump() << '\n';
  });
}

inline std::vector<DatasetRecord> read_stage_records(const std::string& stage, const fs::path& path) {
  require_file(stage, path, path.filename().string().c_str());
  RecordFile f;
  try {
    f = read_records_file(path);
  } catch (const IoError& e) {
    throw StageError(stage, StageError::Kind::failure, e.what());
  }
  if (!f.diagnostics.empty()) {
    const auto& d = f.diagnostics.front();
    throw StageError(stage, StageError::Kind::corrupt_input,
                     path.filename().string() + ":" + std::to_string(d.line) + ": " + d.reason);
  }
  return std::move(f.records);
}

template <class Fn>
void for_each_json_line(const std::string& stage, const fs::path& path, Fn&& fn) {
  require_file(stage, path, path.filename().string().c_str());
  std::ifstream in(path, std::ios::binary);
  LineReader reader(in);
  Line line;
  while (reader.next(line)) {
    if (trim(line.text).empty()) continue;
    auto fail = [&](const std::string& why) {
      throw StageError(stage, StageError::Kind::corrupt_input,
                       path.filename().string() + ":" + std::to_string(line.number) + ": " + why);
    };
    if (line.overflow) fail("line too long");
    auto j = nlohmann::json::parse(line.text, nullptr, false);
    if (j.is_discarded()) fail(line.terminated ? "malformed JSON" : "truncated final line");
    try {
      fn(j);
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      fail(e.what());
    }
  }
}

inline nlohmann::json read_json_file(const std::string& stage, const fs::path& path) {
  require_file(stage, path, path.filename().string().c_str());
  std::ifstream in(path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw StageError(stage, StageError::Kind::corrupt_input, path.filename().string() + ": malformed JSON");
  return j;
}

// Uniform in [0, 1) from a string key; used for deterministic routing.
inline double unit_hash(std::string_view key, std::string_view salt) {
  return static_cast<double>(StableHasher().add(salt).add(key).value() >> 11) * 0x1.0p-53;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Selected entities on disk

inline nlohmann::json selected_to_json(const SelectedEntity& s) {
  nlohmann::json matches = nlohmann::json::array();
  for (const auto& [p, q] : s.region_matches) matches.push_back({p.str(), q.str()});
  std::vector<std::string> props;
  for (const auto& p : s.eligible_properties) props.push_back(p.str());
  return {{"region", s.assigned_region.str()},
          {"languages", s.covered_languages},
          {"properties", props},
          {"matches", matches},
          {"entity", entity_to_json(s.entity)}};
}

inline SelectedEntity selected_from_json(const nlohmann::json& j) {
  SelectedEntity s;
  s.entity = entity_from_json(j.at("entity"));
  s.assigned_region = EntityId(j.at("region").get<std::string>());
  for (const auto& l : j.at("languages")) s.covered_languages.insert(l.get<std::string>());
  for (const auto& p : j.at("properties")) s.eligible_properties.emplace_back(p.get<std::string>());
  for (const auto& m : j.at("matches"))
    s.region_matches.emplace_back(PropertyId(m.at(0).get<std::string>()), EntityId(m.at(1).get<std::string>()));
  return s;
}

inline std::vector<SelectedEntity> read_selected(const std::string& stage, const fs::path& workdir) {
  std::vector<SelectedEntity> out;
  detail::for_each_json_line(stage, workdir / files::kSelected, [&](const nlohmann::json& j) { out.push_back(selected_from_json(j)); });
  return out;
}

inline LabelIndex read_labels(const std::string& stage, const fs::path& workdir) {
  LabelIndex index;
  detail::for_each_json_line(stage, workdir / files::kLabels, [&](const nlohmann::json& j) {
    index.add(EntityId(j.at("id").get<std::string>()), j.at("labels").get<std::map<std::string, std::string>>());
  });
  return index;
}

// ---------------------------------------------------------------------------
// Per-bucket stage counts and the retention checks over them

struct StageCounts {
  std::size_t templated = 0;
  std::size_t open_ended = 0;  // refined.jsonl
  std::size_t mcq = 0;         // mcq.jsonl (MCQ and true/false)
  std::size_t open_ended_filtered = 0;
  std::size_t mcq_filtered = 0;

  std::size_t refined() const { return open_ended + mcq; }
  std::size_t filtered() const { return open_ended_filtered + mcq_filtered; }
};

using BucketKey = std::pair<std::string, std::string>;  // (region QID, language)

inline void tally_stage_counts(std::map<BucketKey, StageCounts>& counts, std::span<const DatasetRecord> records) {
  for (const auto& r : records) {
    StageCounts& c = counts[{r.region.str(), r.language}];
    const bool open = is_open_ended(r.kind);
    switch (r.stage) {
      case Stage::templated: ++c.templated; break;
      case Stage::refined: ++(open ? c.open_ended : c.mcq); break;
      case Stage::filtered: ++(open ? c.open_ended_filtered : c.mcq_filtered); break;
    }
  }
}

// filtered <= refined <= templated for every bucket, overall and per family.
inline std::vector<std::string> retention_violations(const std::map<BucketKey, StageCounts>& counts) {
  std::vector<std::string> out;
  for (const auto& [key, c] : counts) {
    auto bucket = "(" + key.first + ", " + key.second + ")";
    if (c.refined() > c.templated)
      out.push_back(bucket + ": refined " + std::to_string(c.refined()) + " > templated " + std::to_string(c.templated));
    if (c.filtered() > c.refined())
      out.push_back(bucket + ": filtered " + std::to_string(c.filtered()) + " > refined " + std::to_string(c.refined()));
    if (c.open_ended_filtered > c.open_ended) out.push_back(bucket + ": open-ended filtered > refined");
    if (c.mcq_filtered > c.mcq) out.push_back(bucket + ": mcq filtered > generated");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stages

class PipelineRunner {
 public:
  explicit PipelineRunner(PipelineConfig cfg, PipelineServices services = {})
      : cfg_(std::move(cfg)), services_(std::move(services)) {}

  const PipelineConfig& config() const { return cfg_; }

  nlohmann::json run(StageName stage) {
    const std::string name = to_string(stage);
    try {
      cfg_.validate();
    } catch (const ConfigError& e) {
      throw StageError(name, StageError::Kind::config_invalid, e.what());
    }
    if (stage != StageName::eval) fs::create_directories(cfg_.workdir);
    try {
      switch (stage) {
        case StageName::select: return select();
        case StageName::images: return images();
        case StageName::generate: return generate();
        case StageName::mcq: return mcq();
        case StageName::refine: return refine();
        case StageName::filter: return filter();
        case StageName::sample: return sample();
        case StageName::stats: return stats();
        case StageName::eval: throw StageError(name, StageError::Kind::config_invalid, "eval runs through run_eval()");
      }
    } catch (const StageError&) {
      throw;
    } catch (const ConfigError& e) {
      throw StageError(name, StageError::Kind::config_invalid, e.what());
    } catch (const RecordInvariantViolation& e) {
      throw StageError(name, StageError::Kind::invariant_violation, e.what());
    } catch (const std::exception& e) {
      throw StageError(name, StageError::Kind::failure, e.what());
    }
    return {};
  }

  // select -> ... -> stats, then the manifest. Stops at the first failure.
  nlohmann::json run_all() {
    nlohmann::json reports = nlohmann::json::array();
    for (StageName s : kPipelineStages) reports.push_back(run(s));
    auto manifest = write_manifest();
    return {{"stages", reports}, {"manifest", manifest}};
  }

  // Lists every artifact with record count and content hash, plus per-bucket
  // stage counts; checks retention and reconciliation with the stats file.
  nlohmann::json write_manifest() {
    const std::string stage = "manifest";
    nlohmann::json artifacts = nlohmann::json::array();
    for (const char* f : {files::kSelected, files::kLabels, files::kImages, files::kTemplated, files::kMcq, files::kMcqRejects,
                          files::kRefined, files::kRefineRejects, files::kFiltered, files::kFilterRejects, files::kSampled,
                          files::kSamplingPlan, files::kStatsJson, files::kStatsText}) {
      fs::path p = cfg_.workdir / f;
      if (!fs::exists(p)) continue;
      artifacts.push_back(artifact_entry(p));
    }
    auto counts = bucket_counts(stage);
    nlohmann::json buckets = nlohmann::json::array();
    for (const auto& [key, c] : counts)
      buckets.push_back({{"region", key.first},
                         {"language", key.second},
                         {"templated", c.templated},
                         {"open_ended", c.open_ended},
                         {"mcq", c.mcq},
                         {"open_ended_filtered", c.open_ended_filtered},
                         {"mcq_filtered", c.mcq_filtered}});
    nlohmann::json manifest{{"artifacts", artifacts}, {"buckets", buckets}};
    auto violations = retention_violations(counts);
    if (!violations.empty())
      throw StageError(stage, StageError::Kind::invariant_violation, "retention violated: " + violations.front());
    auto stats = detail::read_json_file(stage, cfg_.workdir / files::kStatsJson);
    auto mismatches = reconcile_manifest_with_stats(manifest, stats);
    if (!mismatches.empty())
      throw StageError(stage, StageError::Kind::invariant_violation, "manifest does not match stats: " + mismatches.front());
    detail::write_json_file(cfg_.workdir / files::kManifest, manifest);
    return manifest;
  }

  // Sums the manifest buckets per region and per language and compares them
  // with the stats file columns.
  static std::vector<std::string> reconcile_manifest_with_stats(const nlohmann::json& manifest, const nlohmann::json& stats) {
    std::map<std::string, std::array<std::size_t, 5>> by_region, by_lang;
    for (const auto& b : manifest.at("buckets")) {
      std::array<std::size_t, 5> v{b.at("templated").get<std::size_t>(), b.at("open_ended").get<std::size_t>(),
                                   b.at("mcq").get<std::size_t>(), b.at("open_ended_filtered").get<std::size_t>(),
                                   b.at("mcq_filtered").get<std::size_t>()};
      auto& r = by_region[b.at("region").get<std::string>()];
      auto& l = by_lang[b.at("language").get<std::string>()];
      for (std::size_t i = 0; i < 5; ++i) r[i] += v[i], l[i] += v[i];
    }
    static constexpr const char* kCols[] = {"Template QA", "Open-Ended", "MCQ", "Open-Ended_F", "MCQ_F"};
    std::vector<std::string> out;
    const auto& regions = stats.at("per_region");
    const auto& langs = stats.at("per_language");
    if (regions.size() != by_region.size()) out.push_back("region count differs");
    if (langs.size() != by_lang.size()) out.push_back("language count differs");
    for (const auto& [region, v] : by_region) {
      if (!regions.contains(region)) {
        out.push_back("stats lacks region " + region);
        continue;
      }
      for (std::size_t i = 0; i < 5; ++i)
        if (regions[region].at(kCols[i]).get<std::size_t>() != v[i])
          out.push_back("region " + region + " column " + kCols[i]);
    }
    for (const auto& [lang, v] : by_lang) {
      if (!langs.contains(lang)) {
        out.push_back("stats lacks language " + lang);
        continue;
      }
      for (std::size_t i = 1; i < 5; ++i)
        if (langs[lang].at(kCols[i]).get<std::size_t>() != v[i]) out.push_back("language " + lang + " column " + kCols[i]);
    }
    return out;
  }

 private:
  // ---- select ------------------------------------------------------------

  nlohmann::json select() {
    const std::string stage = "select";
    detail::require_file(stage, cfg_.dump, "dump");
    EntitySelector selector(cfg_.selection);
    std::vector<SelectedEntity> selected;
    std::size_t parsed = 0, diagnostics = 0;
    nlohmann::json first_diagnostics = nlohmann::json::array();
    {
      std::ifstream in(cfg_.dump, std::ios::binary);
      DumpParser parser(in);
      while (auto item = parser.next()) {
        if (auto* d = std::get_if<ParseDiagnostic>(&*item)) {
          ++diagnostics;
          if (first_diagnostics.size() < 20)
            first_diagnostics.push_back({{"line", d->line}, {"reason", d->reason}, {"truncated_tail", d->truncated_tail}});
          continue;
        }
        ++parsed;
        if (auto s = selector(std::get<Entity>(*item))) selected.push_back(std::move(*s));
      }
    }
    std::map<std::string, std::size_t> per_region;
    for (const auto& s : selected) ++per_region[s.assigned_region.str()];
    nlohmann::json medians = nlohmann::json::object();
    if (cfg_.selection.cap.kind == CapMode::Kind::country_median)
      for (const auto& [region, n] : per_region) medians[region] = country_property_median(selected, EntityId(region));
    apply_property_caps(selected, cfg_.selection.cap);

    // Second pass: labels of everything the templates may need to render.
    std::set<EntityId> wanted;
    for (const auto& r : cfg_.selection.regions) wanted.insert(r.qid);
    for (const auto& s : selected)
      for (const auto& p : s.eligible_properties)
        for (const auto& v : s.entity.claims.at(p)) {
          if (const auto* id = std::get_if<EntityId>(&v)) wanted.insert(*id);
          if (const auto* q = std::get_if<Quantity>(&v); q && q->unit) wanted.insert(*q->unit);
        }
    std::set<LanguageCode> label_langs = cfg_.selection.languages;
    label_langs.insert("en");
    std::vector<nlohmann::json> label_rows;
    {
      std::ifstream in(cfg_.dump, std::ios::binary);
      DumpParser parser(in);
      while (auto item = parser.next()) {
        const auto* e = std::get_if<Entity>(&*item);
        if (!e || !wanted.count(e->id)) continue;
        auto labels = entity_labels_in(*e, label_langs);
        if (!labels.empty()) label_rows.push_back({{"id", e->id.str()}, {"labels", labels}});
      }
    }
    std::vector<nlohmann::json> rows;
    rows.reserve(selected.size());
    for (const auto& s : selected) rows.push_back(selected_to_json(s));
    detail::write_jsonl(cfg_.workdir / files::kSelected, rows);
    detail::write_jsonl(cfg_.workdir / files::kLabels, label_rows);
    return {{"stage", stage},
            {"inputs", parsed},
            {"outputs", selected.size()},
            {"rejects", diagnostics},
            {"selected_per_region", per_region},
            {"property_cap_medians", medians},
            {"labels", label_rows.size()},
            {"diagnostics", first_diagnostics}};
  }

  // ---- images ------------------------------------------------------------

  nlohmann::json images() {
    const std::string stage = "images";
    auto selected = read_selected(stage, cfg_.workdir);
    std::unique_ptr<CommonsClient> live, replay, recording;
    CommonsClient* client = nullptr;
    auto need_live = [&] {
      if (!services_.make_commons) throw StageError(stage, StageError::Kind::config_invalid, "live Commons access is not available");
      live = services_.make_commons(cfg_.images);
      return live.get();
    };
    switch (cfg_.images.mode) {
      case GatewayMode::replay:
        detail::require_file(stage, cfg_.commons_store, "commons replay store");
        replay = std::make_unique<ReplayCommonsClient>(cfg_.commons_store);
        client = replay.get();
        break;
      case GatewayMode::record:
        if (cfg_.commons_store.empty()) throw StageError(stage, StageError::Kind::config_invalid, "no commons store path");
        recording = std::make_unique<RecordingCommonsClient>(*need_live(), cfg_.commons_store);
        client = recording.get();
        break;
      case GatewayMode::live:
        client = need_live();
        break;
    }
    auto build = build_image_manifest(selected, *client, cfg_.images.max_per_entity, cfg_.images.max_in_flight);
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : build.failures) failures.push_back({{"entity", f.entity.str()}, {"reason", f.reason}});
    detail::write_json_file(cfg_.workdir / files::kImages, manifest_to_json(build.manifest));
    return {{"stage", stage},
            {"inputs", selected.size()},
            {"outputs", build.manifest.total()},
            {"entities_with_images", build.manifest.entries.size()},
            {"rejects", build.failures.size()},
            {"failures", failures}};
  }

  // ---- generate ----------------------------------------------------------

  nlohmann::json generate() {
    const std::string stage = "generate";
    auto selected = read_selected(stage, cfg_.workdir);
    auto labels = read_labels(stage, cfg_.workdir);
    ImageManifest manifest;
    try {
      manifest = manifest_from_json(detail::read_json_file(stage, cfg_.workdir / files::kImages));
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(stage, StageError::Kind::corrupt_input, std::string(files::kImages) + ": " + e.what());
    }
    detail::require_file(stage, cfg_.templates, "template file");
    TemplateStore templates = TemplateStore::load(cfg_.templates);

    GenerationCounts counts;
    std::vector<DatasetRecord> out;
    std::size_t without_images = 0;
    for (const auto& s : selected) {
      auto qas = generate_entity_qas(s, templates, labels, &counts);
      if (!manifest.entries.count(s.entity.id)) {
        ++without_images;
        continue;
      }
      for (const auto& t : pair_images_with_qa(manifest, qas)) {
        DatasetRecord r;
        r.kind = t.qa.property ? RecordKind::property : RecordKind::identity;
        r.entity_id = t.qa.entity_id;
        r.region = t.qa.region;
        r.language = t.qa.language;
        r.property = t.qa.property;
        r.image = t.image;
        r.question = t.qa.question;
        r.answer = t.qa.answer;
        r.stage = Stage::templated;
        r.id = record_id(r.entity_id, r.kind, r.property, r.language, r.image, r.question + "\n" + r.answer);
        out.push_back(std::move(r));
      }
    }
    detail::write_record_file(cfg_.workdir / files::kTemplated, out);
    return {{"stage", stage},
            {"inputs", selected.size()},
            {"outputs", out.size()},
            {"rejects", counts.missing_template + counts.missing_label + counts.render_failure},
            {"qa_pairs", counts.emitted},
            {"missing_template", counts.missing_template},
            {"missing_label", counts.missing_label},
            {"render_failure", counts.render_failure},
            {"label_fallbacks", counts.notes.label_fallbacks},
            {"units_dropped", counts.notes.unit_dropped},
            {"entities_without_images", without_images}};
  }

  // ---- LLM stages --------------------------------------------------------

  struct EntityView {
    std::unordered_map<EntityId, Entity> by_id;

    const Entity& at(const std::string& stage, const EntityId& id) const {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw StageError(stage, StageError::Kind::corrupt_input, "record refers to unselected entity " + id.str());
      return it->second;
    }
  };

  EntityView entity_view(const std::string& stage) {
    EntityView v;
    for (auto& s : read_selected(stage, cfg_.workdir)) v.by_id.emplace(s.entity.id, std::move(s.entity));
    return v;
  }

  PromptContext base_context(const Entity& e, const DatasetRecord& r) const {
    auto pick = [&](const std::map<LanguageCode, std::string>& m) -> std::string {
      if (auto it = m.find(r.language); it != m.end()) return it->second;
      if (auto it = m.find("en"); it != m.end()) return it->second;
      return m.empty() ? std::string() : m.begin()->second;
    };
    std::string label = pick(e.labels);
    return {{"label", label.empty() ? e.id.str() : label},
            {"description", pick(e.descriptions)},
            {"region", cfg_.region_name(r.region)},
            {"language_name", cfg_.language_name(r.language)},
            {"language", cfg_.language_name(r.language)},
            {"question", r.question},
            {"answer", r.answer}};
  }

  struct LlmTask {
    PromptRequest request;
    std::string client;
  };

  template <class T>
  using Outcome = std::variant<T, std::string>;  // parsed value or reject reason

  // Runs the tasks through one gateway; identical requests are sent once.
  // Replay misses fail the stage after all tasks have been tried.
  template <class T, class Parse>
  std::vector<Outcome<T>> run_llm(const std::string& stage, const std::vector<LlmTask>& tasks, Parse parse,
                                  nlohmann::json& report) {
    std::unique_ptr<ReplayStore> store;
    if (cfg_.gateway.mode == GatewayMode::replay) {
      detail::require_file(stage, cfg_.model_store, "model replay store");
      store = std::make_unique<ReplayStore>(cfg_.model_store);
    } else if (cfg_.gateway.mode == GatewayMode::record) {
      if (cfg_.model_store.empty()) throw StageError(stage, StageError::Kind::config_invalid, "no model store path");
      store = std::make_unique<ReplayStore>(cfg_.model_store);
    }
    Gateway gateway(cfg_.gateway, store.get(), services_.sleeper);

    std::map<std::string, std::unique_ptr<ModelClient>> clients;
    if (cfg_.gateway.mode != GatewayMode::replay)
      for (const auto& t : tasks)
        if (!clients.count(t.client)) {
          auto it = cfg_.clients.find(t.client);
          if (it == cfg_.clients.end()) throw StageError(stage, StageError::Kind::config_invalid, "unknown client " + t.client);
          clients[t.client] = services_.make_model(t.client, it->second);
        }

    std::unordered_map<std::string, std::size_t> unique;
    std::vector<std::size_t> job_of(tasks.size());
    std::vector<std::size_t> jobs;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      auto [it, fresh] = unique.emplace(request_hash(tasks[i].request), jobs.size());
      if (fresh) jobs.push_back(i);
      job_of[i] = it->second;
    }
    std::vector<std::optional<Outcome<T>>> results(jobs.size());
    std::vector<std::string> misses(jobs.size());
    parallel_for(jobs.size(), cfg_.gateway.max_in_flight, [&](std::size_t j) {
      const LlmTask& task = tasks[jobs[j]];
      ModelClient* client = clients.count(task.client) ? clients[task.client].get() : nullptr;
      try {
        results[j] = Outcome<T>(std::in_place_index<0>, gateway.ask(task.request, client, parse));
      } catch (const ReplayMiss& e) {
        misses[j] = e.hash;
      } catch (const MalformedResponse& e) {
        results[j] = Outcome<T>(std::in_place_index<1>, "malformed:" + e.reason);
      } catch (const ModelRefusal&) {
        results[j] = Outcome<T>(std::in_place_index<1>, "refusal");
      } catch (const TransportExhausted&) {
        results[j] = Outcome<T>(std::in_place_index<1>, "transport-exhausted");
      } catch (const std::exception& e) {
        results[j] = Outcome<T>(std::in_place_index<1>, std::string("error:") + e.what());
      }
    });
    std::size_t miss_count = 0;
    std::string first_miss;
    for (const auto& m : misses)
      if (!m.empty()) {
        if (first_miss.empty()) first_miss = m;
        ++miss_count;
      }
    if (miss_count)
      throw StageError(stage, StageError::Kind::failure,
                       std::to_string(miss_count) + " replay misses (first request hash " + first_miss + ")");
    const auto& c = gateway.counters();
    report["requests"] = jobs.size();
    report["live_calls"] = c.live_calls.load();
    report["replay_hits"] = c.replay_hits.load();
    report["transport_retries"] = c.transport_retries.load();
    report["malformed_retries"] = c.malformed_retries.load();
    std::vector<Outcome<T>> out;
    out.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) out.push_back(*results[job_of[i]]);
    return out;
  }

  bool routed_to_mcq(const DatasetRecord& r) const { return detail::unit_hash(r.id, "mcq") < cfg_.mcq_fraction; }
  bool routed_to_tf(const DatasetRecord& r) const { return detail::unit_hash(r.id, "truefalse") < cfg_.tf_fraction; }

  static nlohmann::json reject_row(const DatasetRecord& r, const std::string& reason) {
    return {{"id", r.id}, {"entity", r.entity_id.str()}, {"lang", r.language}, {"reason", reason}};
  }

  static std::map<std::string, std::size_t> reason_histogram(const std::vector<nlohmann::json>& rejects) {
    std::map<std::string, std::size_t> h;
    for (const auto& r : rejects) ++h[r.at("reason").get<std::string>()];
    return h;
  }

  // ---- mcq ---------------------------------------------------------------

  using McqOrTf = std::variant<McqItem, TfItem>;

  nlohmann::json mcq() {
    const std::string stage = "mcq";
    auto templated = detail::read_stage_records(stage, cfg_.workdir / files::kTemplated);
    auto entities = entity_view(stage);
    std::vector<const DatasetRecord*> picked;
    std::vector<LlmTask> tasks;
    for (const auto& r : templated) {
      if (!routed_to_mcq(r)) continue;
      const Entity& e = entities.at(stage, r.entity_id);
      PromptKind kind = routed_to_tf(r) ? PromptKind::truefalse : PromptKind::mcq;
      RequestMeta meta{r.entity_id.str(), r.language, r.region.str(), {r.id}};
      tasks.push_back({render_prompt(kind, base_context(e, r), std::nullopt, meta), cfg_.routes.resolve(r.region.str(), r.language)});
      picked.push_back(&r);
    }
    nlohmann::json report{{"stage", stage}, {"inputs", templated.size()}, {"routed", tasks.size()}};
    auto parse = [](std::string_view text) -> McqOrTf { return parse_mcq_response(text); };
    auto parse_tf = [](std::string_view text) -> McqOrTf { return parse_tf_response(text); };
    // One gateway pass per prompt kind keeps the parsers apart.
    std::vector<LlmTask> mcq_tasks, tf_tasks;
    std::vector<std::size_t> mcq_idx, tf_idx;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (tasks[i].request.kind == PromptKind::mcq) {
        mcq_tasks.push_back(tasks[i]);
        mcq_idx.push_back(i);
      } else {
        tf_tasks.push_back(tasks[i]);
        tf_idx.push_back(i);
      }
    }
    nlohmann::json mcq_report, tf_report;
    auto mcq_out = run_llm<McqOrTf>(stage, mcq_tasks, parse, mcq_report);
    auto tf_out = run_llm<McqOrTf>(stage, tf_tasks, parse_tf, tf_report);
    std::vector<std::optional<Outcome<McqOrTf>>> outcomes(tasks.size());
    for (std::size_t i = 0; i < mcq_idx.size(); ++i) outcomes[mcq_idx[i]] = std::move(mcq_out[i]);
    for (std::size_t i = 0; i < tf_idx.size(); ++i) outcomes[tf_idx[i]] = std::move(tf_out[i]);

    std::vector<DatasetRecord> out;
    std::vector<nlohmann::json> rejects;
    std::size_t n_mcq = 0, n_tf = 0;
    for (std::size_t i = 0; i < picked.size(); ++i) {
      const DatasetRecord& src = *picked[i];
      auto& outcome = *outcomes[i];
      if (auto* reason = std::get_if<std::string>(&outcome)) {
        rejects.push_back(reject_row(src, *reason));
        continue;
      }
      DatasetRecord r = src;
      r.stage = Stage::refined;
      const auto& item = std::get<McqOrTf>(outcome);
      if (const auto* m = std::get_if<McqItem>(&item)) {
        if (leakage_check(m->question, entities.at(stage, r.entity_id), r.language)) {
          rejects.push_back(reject_row(src, "leakage"));
          continue;
        }
        r.kind = RecordKind::mcq;
        r.question = m->question;
        r.options = m->options;
        r.correct_index = m->correct_index;
        r.answer = m->options[static_cast<std::size_t>(m->correct_index)];
        r.explanation = m->explanation;
        ++n_mcq;
      } else {
        const auto& t = std::get<TfItem>(item);
        r.kind = RecordKind::truefalse;
        r.question = t.text;
        r.answer = t.answer ? "True" : "False";
        r.explanation = t.explanation;
        ++n_tf;
      }
      out.push_back(std::move(r));
    }
    detail::write_record_file(cfg_.workdir / files::kMcq, out);
    detail::write_jsonl(cfg_.workdir / files::kMcqRejects, rejects);
    report["outputs"] = out.size();
    report["rejects"] = rejects.size();
    report["reject_reasons"] = reason_histogram(rejects);
    report["mcq"] = n_mcq;
    report["truefalse"] = n_tf;
    report["gateway"] = {{"mcq", mcq_report}, {"truefalse", tf_report}};
    return report;
  }

  // ---- refine ------------------------------------------------------------

  nlohmann::json refine() {
    const std::string stage = "refine";
    auto templated = detail::read_stage_records(stage, cfg_.workdir / files::kTemplated);
    auto entities = entity_view(stage);
    std::vector<const DatasetRecord*> picked;
    std::vector<LlmTask> tasks;
    for (const auto& r : templated) {
      if (routed_to_mcq(r)) continue;
      const Entity& e = entities.at(stage, r.entity_id);
      RequestMeta meta{r.entity_id.str(), r.language, r.region.str(), {r.id}};
      tasks.push_back({render_prompt(PromptKind::refine, base_context(e, r), std::nullopt, meta),
                       cfg_.routes.resolve(r.region.str(), r.language)});
      picked.push_back(&r);
    }
    nlohmann::json report{{"stage", stage}, {"inputs", templated.size()}, {"routed", tasks.size()}};
    nlohmann::json gw;
    auto outcomes = run_llm<RefinedQa>(stage, tasks, [](std::string_view t) { return parse_refine_response(t); }, gw);
    std::vector<DatasetRecord> out;
    std::vector<nlohmann::json> rejects;
    std::size_t repeated_marker = 0;
    for (std::size_t i = 0; i < picked.size(); ++i) {
      const DatasetRecord& src = *picked[i];
      if (auto* reason = std::get_if<std::string>(&outcomes[i])) {
        rejects.push_back(reject_row(src, *reason));
        continue;
      }
      const auto& q = std::get<RefinedQa>(outcomes[i]);
      if (leakage_check(q.question, entities.at(stage, src.entity_id), src.language)) {
        rejects.push_back(reject_row(src, "leakage"));
        continue;
      }
      if (q.repeated_question_marker) ++repeated_marker;
      DatasetRecord r = src;
      r.stage = Stage::refined;
      r.question = q.question;
      r.answer = q.answer;
      out.push_back(std::move(r));
    }
    detail::write_record_file(cfg_.workdir / files::kRefined, out);
    detail::write_jsonl(cfg_.workdir / files::kRefineRejects, rejects);
    report["outputs"] = out.size();
    report["rejects"] = rejects.size();
    report["reject_reasons"] = reason_histogram(rejects);
    report["repeated_question_marker"] = repeated_marker;
    report["gateway"] = gw;
    return report;
  }

  // ---- filter ------------------------------------------------------------

  static std::string options_text(const DatasetRecord& r) {
    if (r.kind == RecordKind::truefalse) return "A) True\nB) False";
    std::string out;
    for (std::size_t i = 0; i < 4; ++i) {
      if (i) out += '\n';
      out += std::string(1, static_cast<char>('A' + i)) + ") " + (*r.options)[i];
    }
    return out;
  }

  nlohmann::json filter() {
    const std::string stage = "filter";
    auto refined = detail::read_stage_records(stage, cfg_.workdir / files::kRefined);
    auto mcqs = detail::read_stage_records(stage, cfg_.workdir / files::kMcq);
    auto entities = entity_view(stage);
    std::vector<DatasetRecord> inputs = std::move(refined);
    inputs.insert(inputs.end(), std::make_move_iterator(mcqs.begin()), std::make_move_iterator(mcqs.end()));

    std::vector<LlmTask> vqa_tasks, mcq_tasks;
    std::vector<std::size_t> vqa_idx, mcq_idx;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const DatasetRecord& r = inputs[i];
      PromptContext ctx = base_context(entities.at(stage, r.entity_id), r);
      RequestMeta meta{r.entity_id.str(), r.language, r.region.str(), {r.id}};
      std::string client = cfg_.judge_routes.resolve(r.region.str(), r.language);
      if (is_open_ended(r.kind)) {
        vqa_tasks.push_back({render_prompt(PromptKind::vqa_filter, ctx, r.image, meta), client});
        vqa_idx.push_back(i);
      } else {
        ctx["question_type"] = r.kind == RecordKind::mcq ? "multiple-choice" : "true/false";
        ctx["options_text"] = options_text(r);
        ctx["correct_answer"] = r.kind == RecordKind::mcq
                                    ? std::string(1, static_cast<char>('A' + *r.correct_index)) + ") " + r.answer
                                    : r.answer;
        ctx["explanation"] = r.explanation.value_or("");
        mcq_tasks.push_back({render_prompt(PromptKind::mcq_filter, ctx, r.image, meta), client});
        mcq_idx.push_back(i);
      }
    }
    nlohmann::json vqa_report, mcq_report;
    auto vqa_out = run_llm<FilterVerdict>(
        stage, vqa_tasks, [](std::string_view t) { return parse_filter_verdict(t, FilterKind::vqa); }, vqa_report);
    auto mcq_out = run_llm<FilterVerdict>(
        stage, mcq_tasks, [](std::string_view t) { return parse_filter_verdict(t, FilterKind::mcq); }, mcq_report);
    std::vector<std::optional<Outcome<FilterVerdict>>> outcomes(inputs.size());
    for (std::size_t i = 0; i < vqa_idx.size(); ++i) outcomes[vqa_idx[i]] = std::move(vqa_out[i]);
    for (std::size_t i = 0; i < mcq_idx.size(); ++i) outcomes[mcq_idx[i]] = std::move(mcq_out[i]);

    std::vector<DatasetRecord> out;
    std::vector<nlohmann::json> rejects;
    std::map<std::string, std::size_t> issues;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const DatasetRecord& src = inputs[i];
      if (auto* reason = std::get_if<std::string>(&*outcomes[i])) {
        rejects.push_back(reject_row(src, *reason));
        continue;
      }
      const auto& v = std::get<FilterVerdict>(*outcomes[i]);
      ++issues[std::string(to_string(v.issue))];
      if (!v.match || v.culturally_relevant == false) {
        auto row = reject_row(src, v.match ? "not-culturally-relevant" : "no-match");
        row["verdict"] = verdict_to_json(v);
        rejects.push_back(std::move(row));
        continue;
      }
      DatasetRecord r = src;
      r.stage = Stage::filtered;
      r.verdict = v;
      out.push_back(std::move(r));
    }
    detail::write_record_file(cfg_.workdir / files::kFiltered, out);
    detail::write_jsonl(cfg_.workdir / files::kFilterRejects, rejects);
    return {{"stage", stage},
            {"inputs", inputs.size()},
            {"outputs", out.size()},
            {"rejects", rejects.size()},
            {"reject_reasons", reason_histogram(rejects)},
            {"issues", issues},
            {"gateway", {{"vqa-filter", vqa_report}, {"mcq-filter", mcq_report}}}};
  }

  // ---- sample ------------------------------------------------------------

  nlohmann::json sample() {
    const std::string stage = "sample";
    auto filtered = detail::read_stage_records(stage, cfg_.workdir / files::kFiltered);
    auto unique = dedup_records(filtered);
    auto result = hybrid_sample(unique, cfg_.sampling.t_region, cfg_.sampling.t_lang, cfg_.sampling.budget, cfg_.sampling.seed);
    for (auto& r : result.selected)
      if (r.kind == RecordKind::mcq)
        r = shuffle_mcq_options(std::move(r), StableHasher().add(std::to_string(cfg_.sampling.seed)).add(r.id).value());
    detail::write_record_file(cfg_.workdir / files::kSampled, result.selected);
    detail::write_json_file(cfg_.workdir / files::kSamplingPlan, plan_to_json(result.plan, result.selected));
    return {{"stage", stage},
            {"inputs", filtered.size()},
            {"duplicates", filtered.size() - unique.size()},
            {"outputs", result.selected.size()},
            {"rejects", unique.size() - result.selected.size()},
            {"budget", cfg_.sampling.budget},
            {"seed", cfg_.sampling.seed}};
  }

  // ---- stats -------------------------------------------------------------

  std::map<BucketKey, StageCounts> bucket_counts(const std::string& stage) {
    std::map<BucketKey, StageCounts> counts;
    for (const char* f : {files::kTemplated, files::kRefined, files::kMcq, files::kFiltered})
      tally_stage_counts(counts, detail::read_stage_records(stage, cfg_.workdir / f));
    return counts;
  }

  nlohmann::json stats() {
    const std::string stage = "stats";
    std::vector<DatasetRecord> all;
    for (const char* f : {files::kTemplated, files::kRefined, files::kMcq, files::kFiltered}) {
      auto part = detail::read_stage_records(stage, cfg_.workdir / f);
      all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    std::vector<Entity> entities;
    for (auto& s : read_selected(stage, cfg_.workdir)) entities.push_back(std::move(s.entity));
    StatsReport report = compute_stats(all, entities);
    if (cfg_.stats_full_dump) {
      std::ifstream dump(cfg_.dump, std::ios::binary);
      if (!dump) throw StageError(stage, StageError::Kind::missing_input, "cannot open dump " + cfg_.dump.string());
      std::set<EntityId> ids;
      for (const auto& e : entities) ids.insert(e.id);
      report.incoming = incoming_link_histogram(dump, ids);
    }
    std::map<BucketKey, StageCounts> counts;
    tally_stage_counts(counts, all);
    auto violations = retention_violations(counts);
    if (!violations.empty())
      throw StageError(stage, StageError::Kind::invariant_violation, "retention violated: " + violations.front());
    std::map<std::string, std::string> names;
    for (const auto& r : cfg_.selection.regions) names[r.qid.str()] = r.display_name;
    detail::write_json_file(cfg_.workdir / files::kStatsJson, stats_to_json(report));
    detail::write_atomically(cfg_.workdir / files::kStatsText, [&](std::ostream& out) { out << stats_to_table(report, names); });
    return {{"stage", stage},
            {"inputs", all.size()},
            {"outputs", report.per_region.size()},
            {"rejects", 0},
            {"entities", report.entity_count},
            {"wikipedia_presence", report.wikipedia_presence}};
  }

  static nlohmann::json artifact_entry(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    StableHasher h;
    std::size_t lines = 0;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (char c : content) lines += c == '\n' ? 1 : 0;
    h.add(content);
    nlohmann::json j{{"file", p.filename().string()}, {"bytes", content.size()}, {"fnv1a64", h.hex()}};
    if (p.extension() == ".jsonl") j["records"] = lines;
    return j;
  }

  PipelineConfig cfg_;
  PipelineServices services_;
};

// ---------------------------------------------------------------------------
// eval

struct EvalInputs {
  fs::path gold;
  std::vector<std::pair<std::string, fs::path>> systems;  // name, prediction file
  fs::path out_dir;                                      // empty: no files written
};

struct EvalOutput {
  std::map<std::string, ScoreReport> reports;
  std::string table;
};

inline EvalOutput run_eval(const EvalInputs& in) {
  const std::string stage = "eval";
  detail::require_file(stage, in.gold, "gold file");
  if (in.systems.empty()) throw StageError(stage, StageError::Kind::config_invalid, "no prediction files given");
  EvalOutput out;
  try {
    auto golds = read_gold_file(in.gold);
    for (const auto& [name, path] : in.systems) {
      detail::require_file(stage, path, "prediction file");
      auto preds = read_prediction_file(path);
      out.reports[name] = score_predictions(preds, golds);
    }
  } catch (const StageError&) {
    throw;
  } catch (const DuplicatePrediction& e) {
    throw StageError(stage, StageError::Kind::invariant_violation, e.what());
  } catch (const std::exception& e) {
    throw StageError(stage, StageError::Kind::corrupt_input, e.what());
  }
  out.table = render_score_table(out.reports);
  if (!in.out_dir.empty()) {
    fs::create_directories(in.out_dir);
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, r] : out.reports) j[name] = score_report_to_json(r);
    detail::write_json_file(in.out_dir / "eval_report.json", j);
    detail::write_atomically(in.out_dir / "eval_report.txt", [&](std::ostream& o) { o << out.table; });
  }
  return out;
}

}  // namespace kultur
