#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "milo/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeFailure = 3;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  std::string out;
  std::string method;
};

milo::ExperimentConfig load_config(const Options& opts) {
  if (opts.config_path.empty()) throw milo::ConfigError("--config is required for this command");
  milo::ExperimentConfig config = milo::ExperimentConfig::load(opts.config_path);
  if (opts.seed_override) config.seeds = {*opts.seed_override};
  if (!opts.out.empty()) config.out_dir = opts.out;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pessimistic model-based imitation learning from offline data"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* cmd, bool config_required) {
    auto* cfg = cmd->add_option("--config", opts.config_path, "Experiment config (JSON)");
    if (config_required) cfg->required();
    cmd->add_option("--seed-override", opts.seed_override, "Run a single seed instead of the list");
    cmd->add_option("--out", opts.out, "Output directory (defaults to the config's out)");
  };
  CLI::App* generate = app.add_subcommand("generate", "Write expert and offline datasets");
  add_common(generate, true);
  CLI::App* run = app.add_subcommand("run", "Run the configured methods on every seed");
  add_common(run, true);
  run->add_option("--method", opts.method,
                  "Only run this method (milo, milo-nopess, bc-expert, bc-both, offline-rl)");
  CLI::App* diagnose = app.add_subcommand("diagnose", "Write coverage diagnostics");
  add_common(diagnose, true);
  CLI::App* report = app.add_subcommand("report", "Aggregate summaries into report tables");
  add_common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (generate->parsed()) {
      const milo::ExperimentConfig config = load_config(opts);
      const nlohmann::json manifest = milo::cmd_generate(config, config.out_dir);
      std::cout << manifest.dump(2) << '\n';
    } else if (run->parsed()) {
      const milo::ExperimentConfig config = load_config(opts);
      std::optional<std::string> method;
      if (!opts.method.empty()) method = opts.method;
      const nlohmann::json summary = milo::cmd_run(config, config.out_dir, method);
      std::cout << summary.dump(2) << '\n';
    } else if (diagnose->parsed()) {
      const milo::ExperimentConfig config = load_config(opts);
      std::cout << milo::cmd_diagnose(config, config.out_dir).dump(2) << '\n';
    } else if (report->parsed()) {
      std::string dir = opts.out;
      if (dir.empty()) {
        if (opts.config_path.empty()) {
          throw milo::ConfigError("report needs --out <dir> or --config");
        }
        dir = load_config(opts).out_dir;
      }
      const auto tables = milo::cmd_report(dir);
      std::cout << milo::to_markdown(tables.first) << '\n' << milo::to_markdown(tables.second);
    }
  } catch (const milo::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
