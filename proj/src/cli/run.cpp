#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "dudo/cli/commands.hpp"
#include "dudo/util/parallel.hpp"

namespace dudo::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out;

  std::string data, checkpoint;
  std::optional<std::size_t> iterations;
  std::vector<std::string> ablate;
  std::optional<std::size_t> epochs;
  std::optional<double> dose;

  std::string projections, mu, volume, meta;
  std::optional<std::size_t> sample;
  int recon_iterations = physics::kDefaultMlemIterations;
  bool limited_view = false;

  std::vector<std::size_t> iteration_list = kDefaultIterationSweep;
  std::vector<double> dose_list = kDefaultDoseSweep;
};

ExperimentConfig resolve(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_experiment_config(o.config);
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.iterations) cfg.cascade.iterations = *o.iterations;
  for (const auto& a : o.ablate) apply_ablation(cfg.cascade.ablation, a);
  if (o.epochs) cfg.training.epochs = *o.epochs;
  if (o.dose) cfg.dataset.dose_rate = *o.dose;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Options& o, const ExperimentConfig& cfg, const char* command) {
  return o.out.empty() ? cfg.output / command : fs::path(o.out);
}

}  // namespace

int run(int argc, const char* const* argv) {
  // Progress goes to stderr; keep stdout lines in order with it.
  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  CLI::App app{"Dual-domain cascaded SPECT projection and attenuation-map synthesis"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "Experiment config (JSON)");
  app.add_option("--seed", o.seed, "Seed for phantoms, initialization and shuffling");
  app.add_flag("--deterministic", o.deterministic, "Run every parallel region on one thread");
  app.add_option("--out", o.out, "Output directory (file for recon)");

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic dataset");
  simulate->add_option("--dose", o.dose, "Low-dose count fraction");

  auto* train_cmd = app.add_subcommand("train", "Train a cascade on a dataset");
  train_cmd->add_option("--data", o.data, "Dataset directory")->required();
  train_cmd->add_option("--iterations", o.iterations, "Cascade iterations N");
  train_cmd->add_option("--ablate", o.ablate, "no-tsp-stage2 | no-bda-stage2 | no-mlf")
      ->check(CLI::IsMember({"no-tsp-stage2", "no-bda-stage2", "no-mlf"}));
  train_cmd->add_option("--epochs", o.epochs, "Maximum epochs");

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", o.data, "Dataset directory")->required();

  auto* recon = app.add_subcommand("recon", "ML-EM reconstruction of a projection stack");
  recon->add_option("--projections", o.projections, "Projection stack (DDT1)")->required();
  recon->add_option("--mu", o.mu, "Attenuation map (DDT1) for corrected reconstruction");
  recon->add_option("--iterations", o.recon_iterations, "ML-EM iterations");
  recon->add_flag("--limited-view", o.limited_view, "Use only the central detector column");

  auto* polar = app.add_subcommand("polar", "17-segment polar map of a volume");
  polar->add_option("--volume", o.volume, "Reconstructed volume (DDT1)")->required();
  polar->add_option("--meta", o.meta, "Shell JSON or dataset manifest")->required();
  polar->add_option("--sample", o.sample, "Sample index when --meta is a manifest");

  auto* sweep_iters = app.add_subcommand("sweep-iters", "Train and score N = 1..5");
  sweep_iters->add_option("--data", o.data, "Dataset directory")->required();
  sweep_iters->add_option("--list", o.iteration_list, "Iteration counts");
  sweep_iters->add_option("--ablate", o.ablate, "Ablation applied to every run")
      ->check(CLI::IsMember({"no-tsp-stage2", "no-bda-stage2", "no-mlf"}));
  sweep_iters->add_option("--epochs", o.epochs, "Maximum epochs");

  auto* sweep_dose = app.add_subcommand("sweep-dose", "Simulate, train and score per dose rate");
  sweep_dose->add_option("--rates", o.dose_list, "Dose rates");
  sweep_dose->add_option("--iterations", o.iterations, "Cascade iterations N");
  sweep_dose->add_option("--epochs", o.epochs, "Maximum epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    set_deterministic(o.deterministic);
    const ExperimentConfig cfg = resolve(o);
    if (simulate->parsed()) {
      cmd_simulate(cfg, out_dir(o, cfg, "simulate"));
    } else if (train_cmd->parsed()) {
      cmd_train(cfg, o.data, out_dir(o, cfg, "train"));
    } else if (eval_cmd->parsed()) {
      cmd_eval(cfg, o.checkpoint, o.data, out_dir(o, cfg, "eval"));
    } else if (recon->parsed()) {
      const fs::path out = o.out.empty() ? cfg.output / "recon" / "recon.ddt" : fs::path(o.out);
      cmd_recon(cfg.geometry, o.projections,
                o.mu.empty() ? std::nullopt : std::optional<fs::path>(o.mu), o.recon_iterations,
                o.limited_view, out);
    } else if (polar->parsed()) {
      const fs::path out =
          o.out.empty() ? cfg.output / "polar" / "polar_segments.csv" : fs::path(o.out);
      cmd_polar(cfg.geometry, o.volume, o.meta, o.sample, out);
    } else if (sweep_iters->parsed()) {
      cmd_sweep_iters(cfg, o.data, o.iteration_list, out_dir(o, cfg, "sweep-iters"));
    } else if (sweep_dose->parsed()) {
      cmd_sweep_dose(cfg, o.dose_list, out_dir(o, cfg, "sweep-dose"));
    }
    return kOk;
  } catch (const physics::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const train::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << " (batch dumped to " << e.dump().string()
              << ")\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace dudo::cli
