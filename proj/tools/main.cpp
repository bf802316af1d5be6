// Command-line front-end: one subcommand per experiment kind plus `validate`.
// Exit codes: 0 success, 1 config error, 2 numerical failure, 3 I/O error.

#include "rqs/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config;
  std::string out_dir;
  std::int64_t seed = -1;
  int threads = 0;
};

int dispatch(const std::string& name, const CommonArgs& args) {
  rqs::ExperimentConfig cfg = rqs::load_config(args.config);
  if (name != "validate" && cfg.kind != name)
    throw rqs::validation_error("config kind '" + cfg.kind + "' does not match subcommand '" +
                                name + "'");
  if (args.seed >= 0) cfg.seed = std::uint64_t(args.seed);
  if (args.threads > 0) cfg.threads = args.threads;
  // Output directory precedence: --out-dir flag, then the RQS_OUT_DIR
  // environment variable, then the config, then the working directory.
  if (const char* env = std::getenv("RQS_OUT_DIR"); env && *env) cfg.out_dir = env;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;

  if (name == "validate") {
    std::cout << rqs::validate_config(cfg).dump(2) << "\n";
    return 0;
  }
  return rqs::run_experiment(cfg, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resonator-qudit simulation and gate-synthesis toolkit"};
  app.require_subcommand(1);

  const std::vector<std::string> names = {"spectrum",  "stark",      "gate",
                                          "two-qudit", "trajectories", "synthesize",
                                          "readout",   "validate"};
  CommonArgs args;
  std::string chosen;
  for (const auto& name : names) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config, "experiment config JSON")->required();
    sub->add_option("--seed", args.seed, "override the config seed");
    sub->add_option("--threads", args.threads, "worker thread cap");
    sub->add_option("--out-dir", args.out_dir, "artifact output directory");
    sub->callback([&chosen, name] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return dispatch(chosen, args);
  } catch (const rqs::io_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 3;
  } catch (const rqs::numerical_error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const rqs::validation_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const rqs::sizing_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
