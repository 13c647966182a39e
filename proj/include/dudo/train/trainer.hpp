#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dudo/train/adam.hpp"
#include "dudo/train/examples.hpp"

namespace dudo::train {

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::filesystem::path dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::filesystem::path& dump() const { return dump_; }

 private:
  std::filesystem::path dump_;
};

struct EpochLog {
  std::size_t epoch = 0;  // from 1
  double train_loss = 0;  // mean total loss over the epoch's batches
  double val_nmse_proj = 0;  // percent, final-iteration full-dose projections
  double val_nmse_mu = 0;    // percent, final-iteration attenuation maps
};

struct TrainConfig {
  LossWeights weights;
  double lr_projection = 1e-3;
  double lr_image = 1e-4;
  AdamConfig adam;
  std::size_t batch_size = 2;
  std::size_t epochs = 50;
  std::size_t patience = 10;  // epochs without validation improvement before stopping
  double clip_norm = 10.0;
  std::uint64_t shuffle_seed = 1;
  // Called after every epoch; not part of the serialized config.
  std::function<void(const EpochLog&)> on_epoch;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Projection-domain parameters (".tsp.") and image-domain ones (".bda.").
std::vector<ParamGroup> parameter_groups(nn::Cascade& cascade, const TrainConfig& cfg);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_score = 0;  // val_nmse_proj + val_nmse_mu of the best epoch
};

struct Prediction {
  Tensor p_fdfv;  // [U, V, D], normalized units
  Tensor mu;      // [X, Y, Z], normalized units
};

// Final-iteration outputs in evaluation mode, one per example.
std::vector<Prediction> predict(nn::Cascade& cascade, const std::vector<Example>& examples,
                                std::size_t batch_size);

// Mean per-sample NMSE (percent) of the final-iteration projections and
// attenuation maps.
std::pair<double, double> validation_nmse(nn::Cascade& cascade, const std::vector<Example>& val,
                                          std::size_t batch_size);

// Trains end to end, keeping the parameters with the lowest validation score.
// When out_dir is non-empty the metric log goes to out_dir/metrics.csv and
// the best parameters to out_dir/checkpoint. A non-finite loss throws
// NumericalError after dumping the batch to out_dir/nan_batch.
TrainResult train(nn::Cascade& cascade, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainConfig& cfg,
                  const std::filesystem::path& out_dir = {});

void write_metric_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);

}  // namespace dudo::train
