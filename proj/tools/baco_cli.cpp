// baco: stage runner for collaborative-decoding experiments.
//
// Each stage reads the experiment config, does its work under output_dir,
// and records what it produced in the run manifest. Stages can be invoked
// as verbs (`baco generate ...`) or through `--stage` for script callers.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <baco/harness.hpp>

namespace {

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  int workers = 0;
  bool resume = true;
};

baco::harness::RunOptions options(const Args& args) {
  baco::harness::RunOptions opt;
  opt.workers = args.workers;
  opt.seed = args.seed;
  opt.resume = args.resume;
  return opt;
}

int run_stage(const std::string& stage, const Args& args) {
  const auto config = baco::harness::ExperimentConfig::load(args.config);
  const auto opt = options(args);

  if (stage == "generate") {
    const auto report = baco::harness::run_generate(config, opt);
    std::cout << "generate: " << report.jobs << " jobs, " << report.groups_generated
              << " groups generated, " << report.groups_resumed << " resumed -> "
              << config.output_dir << "/traces\n";
  } else if (stage == "evaluate") {
    baco::harness::run_evaluate(config, opt);
    std::cout << "evaluate: metrics written -> " << config.output_dir << "/metrics\n";
  } else if (stage == "aggregate") {
    baco::harness::run_aggregate(config, opt);
    std::cout << "aggregate: summary written -> " << config.output_dir << "/aggregate\n";
  } else if (stage == "smoke") {
    baco::harness::run_smoke(config, opt);
    std::cout << "smoke: all stages complete -> " << config.output_dir << "\n";
  } else {
    std::cerr << "error: unknown stage '" << stage
              << "' (expected generate, evaluate, aggregate, or smoke)\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Collaborative decoding experiment pipeline"};
  app.require_subcommand(0, 1);

  Args args;
  std::string stage;
  app.add_option("--stage", stage, "stage to run (alternative to the verb form)");

  const auto add_common = [&](CLI::App* cmd, bool sweep_opts) {
    auto* config_opt = cmd->add_option("--config", args.config, "experiment config file")
                           ->check(CLI::ExistingFile);
    if (cmd != &app) config_opt->required();
    cmd->add_option("--workers", args.workers, "worker threads (0 = config value)")
        ->check(CLI::NonNegativeNumber);
    if (sweep_opts) {
      cmd->add_option("--seed", args.seed, "override the config seed");
      cmd->add_flag("--resume,!--no-resume", args.resume,
                    "reuse completed groups from a previous run (default: on)");
    }
  };

  add_common(app.add_subcommand("generate", "decode trace files for every sweep point"), true);
  add_common(app.add_subcommand("evaluate", "score traces into per-sweep metric files"), false);
  add_common(app.add_subcommand("aggregate", "fold metrics into frontier and summary reports"),
             false);
  add_common(app.add_subcommand("smoke", "run all three stages back to back"), true);
  add_common(&app, true);  // --stage form takes the same flags at top level

  CLI11_PARSE(app, argc, argv);

  const auto subs = app.get_subcommands();
  if (!subs.empty())
    stage = subs.front()->get_name();
  else if (stage.empty()) {
    std::cerr << app.help();
    return 2;
  }
  if (args.config.empty()) {
    std::cerr << "error: --config is required\n";
    return 2;
  }

  try {
    return run_stage(stage, args);
  } catch (const baco::harness::RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const baco::BackendError& e) {
    std::cerr << "backend error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
