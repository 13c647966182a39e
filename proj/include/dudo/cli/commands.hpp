#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dudo/data/dataset.hpp"
#include "dudo/eval/polar.hpp"
#include "dudo/nn/networks.hpp"
#include "dudo/train/trainer.hpp"
#include "json.hpp"

namespace dudo::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct EvalConfig {
  int mlem_iterations = physics::kDefaultMlemIterations;
  std::size_t batch_size = 2;
  bool write_images = true;  // PGM slices next to the DDT1 volumes

  void validate() const;
};

struct ExperimentConfig {
  physics::ScannerGeometry geometry = physics::ScannerGeometry::toy();
  data::DatasetConfig dataset;
  nn::CascadeConfig cascade;
  train::TrainConfig training;
  EvalConfig eval;
  std::filesystem::path output = "runs";

  void validate() const;
  // Points every random stream at `seed`: phantoms, weight init and shuffling.
  void apply_seed(std::uint64_t seed);
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& cfg);
// Blocks: geometry, dataset, cascade, training, eval, output. Unknown keys at
// any level throw physics::ConfigError; missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// DUDO_CACHE when set, otherwise a directory under the system temp path.
std::filesystem::path cache_dir();

// Ablation flag names accepted by --ablate.
void apply_ablation(nn::Ablation& ablation, const std::string& name);

data::DatasetManifest cmd_simulate(const ExperimentConfig& cfg, const std::filesystem::path& out);

// Writes metrics.csv and checkpoint/ into out.
train::TrainResult cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& dataset,
                             const std::filesystem::path& out);

struct Scores {
  std::vector<double> nmse, ssim, psnr;
};

struct EvalReport {
  std::vector<std::size_t> samples;
  // Keyed by domain ("proj", "mu", "ac"), then by method.
  std::map<std::string, std::map<std::string, Scores>> scores;
  std::map<std::string, std::vector<double>> polar_ape;  // per method, mean APE per sample
  nlohmann::json summary;
};

// Scores the checkpoint on the test split: projections, attenuation maps and
// attenuation-corrected reconstructions against the full-dose references,
// alongside the LDLV, Non-AC and dataset-mean baselines.
EvalReport cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& dataset, const std::filesystem::path& out);

void cmd_recon(const physics::ScannerGeometry& geom, const std::filesystem::path& projections,
               const std::optional<std::filesystem::path>& mu, int iterations, bool limited_view,
               const std::filesystem::path& out_file);

// `meta` holds either a shell object, an object with a "heart" entry, or a
// dataset manifest together with `sample`.
eval::PolarMap cmd_polar(const physics::ScannerGeometry& geom, const std::filesystem::path& volume,
                         const std::filesystem::path& meta, std::optional<std::size_t> sample,
                         const std::filesystem::path& out_csv);

struct SweepRow {
  double setting = 0;
  std::size_t parameters = 0;
  std::size_t best_epoch = 0;
  double train_seconds = 0;
  double proj_nmse = 0, proj_ssim = 0;
  double mu_nmse = 0, mu_ssim = 0;
  double baseline_ldlv_nmse = 0;     // LDLV input against the full-dose projections
  double baseline_mean_mu_nmse = 0;  // training-set mean attenuation map
};

inline const std::vector<std::size_t> kDefaultIterationSweep{1, 2, 3, 4, 5};
inline const std::vector<double> kDefaultDoseSweep{0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0};

// Trains one cascade per entry and scores it on the test split.
std::vector<SweepRow> cmd_sweep_iters(const ExperimentConfig& cfg,
                                      const std::filesystem::path& dataset,
                                      const std::vector<std::size_t>& iterations,
                                      const std::filesystem::path& out);
// Simulates, trains and scores one dataset per dose rate.
std::vector<SweepRow> cmd_sweep_dose(const ExperimentConfig& cfg, const std::vector<double>& rates,
                                     const std::filesystem::path& out);

void write_sweep_csv(const std::filesystem::path& path, const std::string& setting_name,
                     const std::vector<SweepRow>& rows);

// Writes mid-axial, coronal and sagittal 8-bit slices of an [X, Y, Z] volume
// as <prefix>_axial.pgm, <prefix>_coronal.pgm and <prefix>_sagittal.pgm.
void write_pgm_slices(const Tensor& volume, const std::filesystem::path& prefix);

// Parses the command line and runs one subcommand, returning an ExitCode.
int run(int argc, const char* const* argv);

}  // namespace dudo::cli
