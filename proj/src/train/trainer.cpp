#include "dudo/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "dudo/eval/metrics.hpp"
#include "dudo/tensor/io.hpp"
#include "dudo/tensor/tape.hpp"
#include "dudo/train/checkpoint.hpp"
#include "dudo/util/rng.hpp"

namespace dudo::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<ops::BatchNormState> norms;
};

Snapshot take_snapshot(nn::Cascade& cascade) {
  Snapshot s;
  cascade.visit(nn::Visitor{[&](const std::string&, Tensor& t) { s.params.push_back(t.values()); },
                            [&](const std::string&, ops::BatchNormState& n) { s.norms.push_back(n); }});
  return s;
}

void restore_snapshot(nn::Cascade& cascade, const Snapshot& s) {
  std::size_t p = 0, n = 0;
  cascade.visit(nn::Visitor{
      [&](const std::string&, Tensor& t) {
        std::copy(s.params[p].begin(), s.params[p].end(), t.data().begin());
        ++p;
      },
      [&](const std::string&, ops::BatchNormState& st) { st = s.norms[n++]; }});
}

fs::path dump_batch(const fs::path& out_dir, const Batch& b, std::span<const std::size_t> members,
                    const std::vector<Example>& examples, std::size_t epoch, std::size_t step) {
  const fs::path dir = (out_dir.empty() ? fs::temp_directory_path() / "dudo" : out_dir) / "nan_batch";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) return {};
  try {
    save_ddt(dir / "p_ldlv.ddt", b.p_ldlv);
    save_ddt(dir / "s_ldlv.ddt", b.s_ldlv);
    save_ddt(dir / "p_ldfv.ddt", b.labels.p_ldfv);
    save_ddt(dir / "p_fdfv.ddt", b.labels.p_fdfv);
    save_ddt(dir / "mu.ddt", b.labels.mu);
    save_ddt(dir / "beta.ddt", b.labels.beta);
  } catch (const IoError&) {
    return {};
  }
  json info{{"epoch", epoch}, {"step", step}, {"samples", json::array()}};
  for (std::size_t m : members) info["samples"].push_back(examples[m].index);
  std::ofstream(dir / "batch.json") << info.dump(2) << "\n";
  return dir;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr_projection >= 0) || !(lr_image >= 0))
    throw physics::ConfigError("training: learning rates must be non-negative");
  if (batch_size == 0) throw physics::ConfigError("training: batch size must be positive");
  if (epochs == 0) throw physics::ConfigError("training: epochs must be positive");
  if (!(clip_norm > 0)) throw physics::ConfigError("training: clip norm must be positive");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
    throw physics::ConfigError("training: Adam betas must lie in [0, 1) and eps be positive");
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"alpha_p", c.weights.projection},
              {"alpha_i", c.weights.image},
              {"lr_projection", c.lr_projection},
              {"lr_image", c.lr_image},
              {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"patience", c.patience},
              {"clip_norm", c.clip_norm},
              {"shuffle_seed", c.shuffle_seed}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw physics::ConfigError("training: expected an object");
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "alpha_p") c.weights.projection = val.get<double>();
      else if (key == "alpha_i") c.weights.image = val.get<double>();
      else if (key == "lr_projection") c.lr_projection = val.get<double>();
      else if (key == "lr_image") c.lr_image = val.get<double>();
      else if (key == "batch_size") c.batch_size = val.get<std::size_t>();
      else if (key == "epochs") c.epochs = val.get<std::size_t>();
      else if (key == "patience") c.patience = val.get<std::size_t>();
      else if (key == "clip_norm") c.clip_norm = val.get<double>();
      else if (key == "shuffle_seed") c.shuffle_seed = val.get<std::uint64_t>();
      else if (key == "adam") {
        if (!val.is_object()) throw physics::ConfigError("training.adam: expected an object");
        for (const auto& [k, v] : val.items()) {
          if (k == "beta1") c.adam.beta1 = v.get<double>();
          else if (k == "beta2") c.adam.beta2 = v.get<double>();
          else if (k == "eps") c.adam.eps = v.get<double>();
          else throw physics::ConfigError("training.adam: unknown key '" + k + "'");
        }
      } else {
        throw physics::ConfigError("training: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw physics::ConfigError(std::string("training: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<ParamGroup> parameter_groups(nn::Cascade& cascade, const TrainConfig& cfg) {
  ParamGroup proj{"projection", cfg.lr_projection, {}};
  ParamGroup image{"image", cfg.lr_image, {}};
  cascade.visit(nn::Visitor{[&](const std::string& name, Tensor& t) {
                              if (name.find(".tsp.") != std::string::npos) proj.params.push_back(t);
                              else if (name.find(".bda.") != std::string::npos) image.params.push_back(t);
                              else throw ContractError("parameter " + name + " belongs to no domain");
                            },
                            nullptr});
  return {proj, image};
}

std::vector<Prediction> predict(nn::Cascade& cascade, const std::vector<Example>& examples,
                                std::size_t batch_size) {
  std::vector<Prediction> out;
  std::vector<std::size_t> members;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    members.clear();
    for (std::size_t k = start; k < std::min(examples.size(), start + batch_size); ++k)
      members.push_back(k);
    const Batch b = make_batch(examples, members);
    const auto outs = cascade.forward(b.p_ldlv, b.s_ldlv, nn::NormMode::kEval);
    for (std::size_t k = 0; k < members.size(); ++k)
      out.push_back({batch_item(outs.back().p_fdfv, k), batch_item(outs.back().mu, k)});
  }
  return out;
}

std::pair<double, double> validation_nmse(nn::Cascade& cascade, const std::vector<Example>& val,
                                          std::size_t batch_size) {
  if (val.empty()) throw ContractError("validation set is empty");
  const auto preds = predict(cascade, val, batch_size);
  double proj = 0.0, mu = 0.0;
  for (std::size_t k = 0; k < val.size(); ++k) {
    proj += eval::nmse(preds[k].p_fdfv.values(), val[k].p_fdfv.values());
    mu += eval::nmse(preds[k].mu.values(), val[k].mu.values());
  }
  const double n = static_cast<double>(val.size());
  return {proj / n, mu / n};
}

void write_metric_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  out << "epoch,train_loss,val_nmse_proj,val_nmse_mu\n";
  for (const auto& e : log)
    out << e.epoch << ',' << fmt(e.train_loss) << ',' << fmt(e.val_nmse_proj) << ','
        << fmt(e.val_nmse_mu) << '\n';
  if (!out) throw IoError("cannot write metric log " + path.string());
}

TrainResult train(nn::Cascade& cascade, const std::vector<Example>& train_set,
                  const std::vector<Example>& val_set, const TrainConfig& cfg,
                  const fs::path& out_dir) {
  cfg.validate();
  if (train_set.empty()) throw ContractError("training set is empty");
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  auto groups = parameter_groups(cascade, cfg);
  std::vector<Tensor> all;
  for (const auto& g : groups) all.insert(all.end(), g.params.begin(), g.params.end());
  Adam adam(std::move(groups), cfg.adam);

  TrainResult result;
  Snapshot best;
  std::vector<std::size_t> order(train_set.size());
  std::size_t stale = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::mt19937_64 rng(derive_seed(cfg.shuffle_seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> members(
          order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Batch b = make_batch(train_set, members);
      adam.zero_grad();
      double loss = 0.0;
      {
        Tape tape;
        const auto outs = cascade.forward(b.p_ldlv, b.s_ldlv, nn::NormMode::kTrain);
        const auto terms = total_loss(outs, b.labels, cfg.weights);
        loss = terms.total.item();
        if (!std::isfinite(loss)) {
          const fs::path dump = dump_batch(out_dir, b, members, train_set, epoch, batches + 1);
          throw NumericalError("non-finite training loss in epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches + 1),
                               dump);
        }
        tape.backward(terms.total);
      }
      clip_grad_norm(all, cfg.clip_norm);
      adam.step();
      loss_sum += loss;
      ++batches;
    }

    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(batches);
    if (!val_set.empty()) std::tie(e.val_nmse_proj, e.val_nmse_mu) =
        validation_nmse(cascade, val_set, cfg.batch_size);
    result.log.push_back(e);
    if (cfg.on_epoch) cfg.on_epoch(e);

    // Without a validation set the latest parameters are kept.
    const double score = val_set.empty() ? -static_cast<double>(epoch) : e.val_nmse_proj + e.val_nmse_mu;
    if (result.best_epoch == 0 || score < result.best_score) {
      result.best_epoch = epoch;
      result.best_score = score;
      best = take_snapshot(cascade);
      stale = 0;
    } else if (++stale >= cfg.patience && cfg.patience > 0) {
      break;
    }
  }
  restore_snapshot(cascade, best);
  if (!out_dir.empty()) {
    write_metric_log(out_dir / "metrics.csv", result.log);
    save_checkpoint(cascade, out_dir / "checkpoint",
                    json{{"best_epoch", result.best_epoch}, {"training", train_config_to_json(cfg)}});
  }
  return result;
}

}  // namespace dudo::train
