#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kultur/http_clients.hpp"
#include "kultur/kultur.hpp"

namespace {

using namespace kultur;

std::unique_ptr<ModelClient> make_model_client(const std::string& name, const ClientSpec& spec) {
  if (spec.type != "chat") return make_offline_model_client(name, spec);
  ChatClientConfig c;
  c.base_url = spec.params.value("base_url", std::string("https://api.openai.com/v1"));
  c.model = spec.params.value("model", std::string());
  c.api_key_env = spec.params.value("api_key_env", std::string());
  c.temperature = spec.params.value("temperature", 0.0);
  c.max_tokens = spec.params.value("max_tokens", 1024);
  c.timeout = std::chrono::seconds(spec.params.value("timeout_s", 120));
  return std::make_unique<ChatCompletionsClient>(c);
}

std::unique_ptr<CommonsClient> make_commons_client(const ImageStageConfig& cfg) {
  return std::make_unique<MediaWikiCommonsClient>(cfg.api_url, cfg.user_agent);
}

struct Common {
  std::string config;
  ConfigOverrides overrides;
  std::string workdir, replay, record;
  bool full_dump = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Pipeline configuration file")->required();
  cmd->add_option("--workdir", c.workdir, "Directory holding the stage files");
  cmd->add_option("--seed", c.overrides.seed, "Sampling seed");
  cmd->add_option("--replay", c.replay, "Replay store to answer external calls from");
  cmd->add_option("--record", c.record, "Replay store to append live responses to");
  cmd->add_option("--budget", c.overrides.budget, "Number of records to sample");
  cmd->add_option("--t-region", c.overrides.t_region, "Region sampling temperature");
  cmd->add_option("--t-lang", c.overrides.t_lang, "Language sampling temperature");
}

int run_stages(const Common& c, const std::vector<StageName>& stages, bool manifest) {
  ConfigOverrides o = c.overrides;
  if (!c.workdir.empty()) o.workdir = c.workdir;
  if (!c.replay.empty()) o.replay = c.replay;
  if (!c.record.empty()) o.record = c.record;
  if (c.full_dump) o.full_dump = true;
  const std::string first = to_string(stages.front());
  try {
    PipelineConfig cfg;
    try {
      cfg = load_pipeline_config(c.config);
    } catch (const ConfigError& e) {
      throw StageError(first, StageError::Kind::config_invalid, e.what());
    }
    for (StageName s : stages) {
      PipelineConfig stage_cfg = cfg;
      ConfigOverrides so = o;
      // In a full run the store flags address the model gateway only.
      if (stages.size() > 1 && s == StageName::images) so.replay.reset(), so.record.reset();
      try {
        apply_overrides(stage_cfg, so, s);
      } catch (const ConfigError& e) {
        throw StageError(to_string(s), StageError::Kind::config_invalid, e.what());
      }
      PipelineRunner runner(std::move(stage_cfg), {make_model_client, make_commons_client, {}});
      std::cout << runner.run(s).dump() << std::endl;
    }
    if (manifest) {
      PipelineConfig final_cfg = cfg;
      apply_overrides(final_cfg, o, StageName::stats);
      PipelineRunner runner(std::move(final_cfg));
      auto m = runner.write_manifest();
      std::cout << nlohmann::json{{"stage", "manifest"}, {"artifacts", m["artifacts"].size()}}.dump() << std::endl;
    }
  } catch (const StageError& e) {
    std::cerr << "kultur: " << e.what() << '\n';
    return exit_code(e.kind);
  } catch (const std::exception& e) {
    std::cerr << "kultur: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Culturally grounded VQA dataset pipeline"};
  app.require_subcommand(1);

  std::vector<std::pair<StageName, Common>> stage_opts;
  stage_opts.reserve(kPipelineStages.size());
  std::vector<CLI::App*> stage_cmds;
  for (StageName s : kPipelineStages) {
    stage_opts.emplace_back(s, Common{});
    auto* cmd = app.add_subcommand(to_string(s), std::string("Run the ") + to_string(s) + " stage");
    add_common(cmd, stage_opts.back().second);
    if (s == StageName::stats)
      cmd->add_flag("--full-dump", stage_opts.back().second.full_dump, "Also count incoming links with a second pass over the dump");
    stage_cmds.push_back(cmd);
  }

  Common run_opts;
  auto* run = app.add_subcommand("run", "Run every stage in order and write the manifest");
  add_common(run, run_opts);

  std::string gold, out_dir;
  std::vector<std::string> preds;
  auto* eval = app.add_subcommand("eval", "Score predictions against a gold file");
  eval->add_option("--gold", gold, "Gold file (id, language, target, aliases)")->required();
  eval->add_option("--pred", preds, "Prediction file as NAME=PATH or PATH; repeatable")->required();
  eval->add_option("--out", out_dir, "Directory for eval_report.json and eval_report.txt");

  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < stage_cmds.size(); ++i)
    if (stage_cmds[i]->parsed()) return run_stages(stage_opts[i].second, {stage_opts[i].first}, false);
  if (run->parsed()) return run_stages(run_opts, {kPipelineStages.begin(), kPipelineStages.end()}, true);

  EvalInputs in;
  in.gold = gold;
  in.out_dir = out_dir;
  for (const auto& p : preds) {
    auto eq = p.find('=');
    if (eq == std::string::npos)
      in.systems.emplace_back(std::filesystem::path(p).stem().string(), p);
    else
      in.systems.emplace_back(p.substr(0, eq), p.substr(eq + 1));
  }
  try {
    std::cout << run_eval(in).table;
  } catch (const StageError& e) {
    std::cerr << "kultur: " << e.what() << '\n';
    return exit_code(e.kind);
  }
  return 0;
}
