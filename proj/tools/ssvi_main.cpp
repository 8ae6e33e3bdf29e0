#include <exception>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "ssvi/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed_override;
};

ssvi::harness::HarnessConfig load(const CommonArgs& args) {
  std::ifstream in(args.config_path);
  if (!in) throw std::runtime_error("cannot read config " + args.config_path);
  nlohmann::json j;
  in >> j;
  if (args.seed_override) j["seed"] = *args.seed_override;
  return ssvi::harness::parse_config(j);
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path,
                  "JSON config file; one structured file drives every "
                  "subcommand (see README for the schema and defaults: "
                  "model dpmb|lda, seed, data{...}, fit{estep{kind "
                  "exact|meanfield|gibbs, num_samples 5, burn_in 5}, mstep "
                  "meanfield|ssvi|ssvi_a, schedule{s 1.0, kappa 0.75, ramp "
                  "false}, minibatch 0=full, iterations 100}, "
                  "evaluate{kl_samples 100000, active_threshold 1.0}, "
                  "cgs{sweeps 500, burn_in 250}, matrix{esteps, msteps, etas, "
                  "seeds})")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("-s,--seed", args.seed_override,
                  "override the config seed (all randomness derives from it)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conditionally-conjugate stochastic variational inference harness"};
  app.require_subcommand(1);

  CommonArgs gen_args, fit_args, warm_args, eval_args, matrix_args;
  std::string checkpoint_path;

  auto* gen = app.add_subcommand(
      "generate", "sample a synthetic dataset (with ground truth) to disk");
  add_common(gen, gen_args);

  auto* fit = app.add_subcommand(
      "fit", "fit the configured (E-step x M-step) cell; writes a checkpoint "
             "and a per-iteration trace CSV");
  add_common(fit, fit_args);

  auto* warm = app.add_subcommand(
      "warmstart", "continue fitting from a checkpoint under a new config "
                   "(schedule restarts; model and dataset must match)");
  add_common(warm, warm_args);
  warm->add_option("-k,--checkpoint", checkpoint_path, "checkpoint to start from")
      ->required()
      ->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand(
      "evaluate", "compute model metrics for a checkpoint; writes metrics JSON");
  add_common(eval, eval_args);
  eval->add_option("-k,--checkpoint", checkpoint_path, "checkpoint to evaluate")
      ->required()
      ->check(CLI::ExistingFile);

  auto* matrix = app.add_subcommand(
      "matrix", "run every configured (E-step x M-step x eta x seed) cell and "
                "aggregate one summary row per cell into a CSV");
  add_common(matrix, matrix_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      ssvi::harness::cmd_generate(load(gen_args));
    } else if (fit->parsed()) {
      ssvi::harness::cmd_fit(load(fit_args));
    } else if (warm->parsed()) {
      ssvi::harness::cmd_warmstart(load(warm_args), checkpoint_path);
    } else if (eval->parsed()) {
      ssvi::harness::cmd_evaluate(load(eval_args), checkpoint_path);
    } else if (matrix->parsed()) {
      ssvi::harness::cmd_matrix(load(matrix_args));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
