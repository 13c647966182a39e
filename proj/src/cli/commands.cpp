#include "dudo/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dudo/eval/metrics.hpp"
#include "dudo/train/checkpoint.hpp"

namespace dudo::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using physics::ConfigError;

namespace {

template <class F>
void for_each_key(const json& j, const char* block, F&& f) {
  if (!j.is_object()) throw ConfigError(std::string(block) + ": expected an object");
  try {
    for (const auto& [key, val] : j.items())
      if (!f(key, val)) throw ConfigError(std::string(block) + ": unknown key '" + key + "'");
  } catch (const json::exception& e) {
    throw ConfigError(std::string(block) + ": " + e.what());
  }
}

json dataset_config_to_json(const data::DatasetConfig& d) {
  return json{{"n_train", d.n_train}, {"n_val", d.n_val}, {"n_test", d.n_test},
              {"dose_rate", d.dose_rate}, {"total_counts", d.total_counts}, {"seed", d.seed},
              {"mlem_iterations", d.mlem_iterations}};
}

data::DatasetConfig dataset_config_from_json(const json& j, data::DatasetConfig d) {
  for_each_key(j, "dataset", [&](const std::string& key, const json& val) {
    if (key == "n_train") d.n_train = val.get<std::size_t>();
    else if (key == "n_val") d.n_val = val.get<std::size_t>();
    else if (key == "n_test") d.n_test = val.get<std::size_t>();
    else if (key == "dose_rate") d.dose_rate = val.get<double>();
    else if (key == "total_counts") d.total_counts = val.get<double>();
    else if (key == "seed") d.seed = val.get<std::uint64_t>();
    else if (key == "mlem_iterations") d.mlem_iterations = val.get<int>();
    else return false;
    return true;
  });
  return d;
}

void validate_dataset(const data::DatasetConfig& d) {
  if (d.n_train == 0 || d.n_test == 0)
    throw ConfigError("dataset: n_train and n_test must be positive");
  if (!(d.dose_rate > 0.0 && d.dose_rate <= 1.0))
    throw ConfigError("dataset: dose_rate must lie in (0, 1]");
  if (!(d.total_counts > 0.0) || !std::isfinite(d.total_counts))
    throw ConfigError("dataset: total_counts must be positive");
  if (d.mlem_iterations < 1) throw ConfigError("dataset: mlem_iterations must be at least 1");
}

json eval_config_to_json(const EvalConfig& e) {
  return json{{"mlem_iterations", e.mlem_iterations}, {"batch_size", e.batch_size},
              {"write_images", e.write_images}};
}

EvalConfig eval_config_from_json(const json& j, EvalConfig e) {
  for_each_key(j, "eval", [&](const std::string& key, const json& val) {
    if (key == "mlem_iterations") e.mlem_iterations = val.get<int>();
    else if (key == "batch_size") e.batch_size = val.get<std::size_t>();
    else if (key == "write_images") e.write_images = val.get<bool>();
    else return false;
    return true;
  });
  return e;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

physics::SystemMatrix system_matrix(const physics::ScannerGeometry& geom) {
  return physics::load_or_build(geom, cache_dir());
}

Tensor scaled(const Tensor& t, double s) {
  std::vector<double> v(t.values());
  for (double& x : v) x *= s;
  return Tensor(t.shape(), std::move(v));
}

Tensor clamped(const Tensor& t, double lo, double hi) {
  std::vector<double> v(t.values());
  for (double& x : v) x = std::clamp(x, lo, hi);
  return Tensor(t.shape(), std::move(v));
}

void add_scores(Scores& s, const Tensor& pred, const Tensor& ref) {
  s.nmse.push_back(eval::nmse(pred.values(), ref.values()));
  s.ssim.push_back(eval::ssim(pred, ref));
  s.psnr.push_back(eval::psnr(pred.values(), ref.values()));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

json stats_json(const std::vector<double>& v) {
  const auto ms = eval::mean_std(v);
  return json{{"mean", ms.mean}, {"std", ms.std}};
}

// One row per sample with <metric>_<method> columns in method order.
void write_scores_csv(const fs::path& path, const std::vector<std::size_t>& samples,
                      const std::vector<std::string>& methods,
                      const std::map<std::string, Scores>& scores) {
  auto os = open_out(path);
  os << "sample";
  for (const auto& m : methods) os << ",nmse_" << m << ",ssim_" << m << ",psnr_" << m;
  os << '\n';
  for (std::size_t k = 0; k < samples.size(); ++k) {
    os << samples[k];
    for (const auto& m : methods) {
      const Scores& s = scores.at(m);
      os << ',' << fmt(s.nmse[k]) << ',' << fmt(s.ssim[k]) << ',' << fmt(s.psnr[k]);
    }
    os << '\n';
  }
}

std::vector<double> train_mean_mu(const std::vector<train::Example>& train_set) {
  std::vector<double> mean(train_set.at(0).mu.numel(), 0.0);
  for (const auto& e : train_set)
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e.mu.values()[i];
  for (double& x : mean) x /= static_cast<double>(train_set.size());
  return mean;
}

train::TrainConfig with_progress(train::TrainConfig t) {
  t.on_epoch = [](const train::EpochLog& e) {
    std::fprintf(stderr, "epoch %zu  loss %.4f  val nmse proj %.3f%%  mu %.3f%%\n", e.epoch,
                 e.train_loss, e.val_nmse_proj, e.val_nmse_mu);
  };
  return t;
}

SweepRow train_and_score(const ExperimentConfig& cfg, const fs::path& dataset,
                         const fs::path& out) {
  const auto manifest = data::load_manifest(dataset);
  const auto A = system_matrix(manifest.geometry);
  const auto train_set = train::load_examples(manifest, data::Split::kTrain);
  const auto val_set = train::load_examples(manifest, data::Split::kVal);
  const auto test_set = train::load_examples(manifest, data::Split::kTest);

  nn::Cascade cascade(cfg.cascade, manifest.geometry, A);
  SweepRow row;
  row.parameters = cascade.parameter_count();
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train::train(cascade, train_set, val_set, with_progress(cfg.training), out);
  row.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  row.best_epoch = result.best_epoch;

  const auto preds = train::predict(cascade, test_set, cfg.eval.batch_size);
  const auto mean_mu = train_mean_mu(train_set);
  Scores proj, mu;
  double ldlv = 0.0, mean_map = 0.0;
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    add_scores(proj, preds[k].p_fdfv, test_set[k].p_fdfv);
    add_scores(mu, preds[k].mu, test_set[k].mu);
    ldlv += eval::nmse(test_set[k].p_ldlv.values(), test_set[k].p_fdfv.values());
    mean_map += eval::nmse(mean_mu, test_set[k].mu.values());
  }
  const double n = static_cast<double>(test_set.size());
  row.proj_nmse = mean_of(proj.nmse);
  row.proj_ssim = mean_of(proj.ssim);
  row.mu_nmse = mean_of(mu.nmse);
  row.mu_ssim = mean_of(mu.ssim);
  row.baseline_ldlv_nmse = ldlv / n;
  row.baseline_mean_mu_nmse = mean_map / n;
  return row;
}

std::uint8_t grey(double v, double max) {
  if (!(max > 0)) return 0;
  return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v / max, 0.0, 1.0)));
}

void write_pgm(const fs::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

}  // namespace

void EvalConfig::validate() const {
  if (mlem_iterations < 1) throw ConfigError("eval: mlem_iterations must be at least 1");
  if (batch_size == 0) throw ConfigError("eval: batch_size must be positive");
}

void ExperimentConfig::validate() const {
  geometry.validate();
  validate_dataset(dataset);
  cascade.net.validate();
  if (cascade.iterations == 0) throw ConfigError("cascade: iterations must be at least 1");
  training.validate();
  eval.validate();
  if (output.empty()) throw ConfigError("output: directory must not be empty");
}

void ExperimentConfig::apply_seed(std::uint64_t seed) {
  dataset.seed = seed;
  cascade.seed = seed;
  training.shuffle_seed = seed;
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
  return json{{"geometry", data::geometry_to_json(cfg.geometry)},
              {"dataset", dataset_config_to_json(cfg.dataset)},
              {"cascade", train::cascade_config_to_json(cfg.cascade)},
              {"training", train::train_config_to_json(cfg.training)},
              {"eval", eval_config_to_json(cfg.eval)},
              {"output", cfg.output.string()}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig cfg;
  for_each_key(j, "config", [&](const std::string& key, const json& val) {
    if (key == "geometry") cfg.geometry = data::geometry_from_json(val, cfg.geometry);
    else if (key == "dataset") cfg.dataset = dataset_config_from_json(val, cfg.dataset);
    else if (key == "cascade") cfg.cascade = train::cascade_config_from_json(val, cfg.cascade);
    else if (key == "training") cfg.training = train::train_config_from_json(val, cfg.training);
    else if (key == "eval") cfg.eval = eval_config_from_json(val, cfg.eval);
    else if (key == "output") cfg.output = val.get<std::string>();
    else return false;
    return true;
  });
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_json(path));
}

fs::path cache_dir() {
  if (const char* env = std::getenv("DUDO_CACHE"); env && *env) return env;
  return fs::temp_directory_path() / "dudo-cache";
}

void apply_ablation(nn::Ablation& ablation, const std::string& name) {
  if (name == "no-tsp-stage2") ablation.no_tsp_stage2 = true;
  else if (name == "no-bda-stage2") ablation.no_bda_stage2 = true;
  else if (name == "no-mlf") ablation.no_mlf = true;
  else throw ConfigError("unknown ablation '" + name + "'");
}

data::DatasetManifest cmd_simulate(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.validate();
  const auto A = system_matrix(cfg.geometry);
  auto manifest = data::build_dataset(cfg.dataset, cfg.geometry, A, out);
  std::printf("dataset %s: %zu train, %zu val, %zu test, dose rate %g, %zu LV detectors\n",
              out.string().c_str(), manifest.indices(data::Split::kTrain).size(),
              manifest.indices(data::Split::kVal).size(),
              manifest.indices(data::Split::kTest).size(), manifest.config.dose_rate,
              manifest.lv_detectors.size());
  return manifest;
}

train::TrainResult cmd_train(const ExperimentConfig& cfg, const fs::path& dataset,
                             const fs::path& out) {
  cfg.validate();
  const auto manifest = data::load_manifest(dataset);
  const auto A = system_matrix(manifest.geometry);
  const auto train_set = train::load_examples(manifest, data::Split::kTrain);
  const auto val_set = train::load_examples(manifest, data::Split::kVal);
  nn::Cascade cascade(cfg.cascade, manifest.geometry, A);
  std::printf("training %zu-iteration cascade, %zu parameters\n", cfg.cascade.iterations,
              cascade.parameter_count());
  auto result = train::train(cascade, train_set, val_set, with_progress(cfg.training), out);
  std::printf("best epoch %zu, validation score %.4f\n", result.best_epoch, result.best_score);
  return result;
}

EvalReport cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint,
                    const fs::path& dataset, const fs::path& out) {
  cfg.eval.validate();
  const auto manifest = data::load_manifest(dataset);
  const auto& geom = manifest.geometry;
  const auto A = system_matrix(geom);
  auto loaded = train::load_checkpoint(checkpoint, geom, A);
  const auto train_set = train::load_examples(manifest, data::Split::kTrain);
  const auto test_idx = manifest.indices(data::Split::kTest);
  const auto test_set = train::load_examples(manifest, data::Split::kTest);
  const auto preds = train::predict(*loaded.cascade, test_set, cfg.eval.batch_size);
  const auto mean_mu = train_mean_mu(train_set);
  const int iters = cfg.eval.mlem_iterations;

  EvalReport report;
  report.samples = test_idx;
  auto& proj = report.scores["proj"];
  auto& mu = report.scores["mu"];
  auto& ac = report.scores["ac"];
  const std::vector<std::string> ac_methods{"dudocfnet", "baseline_ldlv", "baseline_non_ac"};

  fs::create_directories(out / "volumes");
  auto polar_os = open_out(out / "polar_segments.csv");
  polar_os << "sample,segment,reference";
  for (const auto& m : ac_methods) polar_os << ',' << m << ",ape_" << m;
  polar_os << '\n';

  for (std::size_t k = 0; k < test_set.size(); ++k) {
    const std::size_t idx = test_idx[k];
    const auto& ex = test_set[k];
    const auto sample = data::load_sample(manifest, idx);
    std::fprintf(stderr, "evaluating sample %zu (%zu/%zu)\n", idx, k + 1, test_set.size());

    add_scores(proj["dudocfnet"], preds[k].p_fdfv, ex.p_fdfv);
    add_scores(proj["baseline_ldlv"], ex.p_ldlv, ex.p_fdfv);
    const Tensor mu_ref = sample.mu.data;
    const Tensor mu_hat = clamped(scaled(preds[k].mu, 1.0 / train::kMuScale), 0.0,
                                  physics::MuMap::kMaxMu);
    add_scores(mu["dudocfnet"], mu_hat, mu_ref);
    add_scores(mu["baseline_dataset_mean"],
               scaled(Tensor(ex.mu.shape(), mean_mu), 1.0 / train::kMuScale), mu_ref);

    // Reference: full-dose, full-view counts corrected with the true map.
    const physics::MuMap mu_true = sample.mu;
    const physics::MuMap mu_pred{mu_hat, geom.voxel_mm};
    const physics::ProjectionStack p_hat{
        clamped(scaled(preds[k].p_fdfv, ex.full_dose_scale), 0.0, HUGE_VAL)};
    const auto reference = physics::mlem_reconstruct(geom, A, sample.p_fdfv, &mu_true, iters);
    std::map<std::string, Tensor> recon;
    recon["dudocfnet"] = physics::mlem_reconstruct(geom, A, p_hat, &mu_pred, iters).data;
    recon["baseline_ldlv"] =
        scaled(physics::mlem_reconstruct(geom, A, sample.p_ldlv, &mu_true, iters, nullptr,
                                         sample.lv_detectors)
                   .data,
               1.0 / sample.dose_rate);
    recon["baseline_non_ac"] =
        physics::mlem_reconstruct(geom, A, sample.p_fdfv, nullptr, iters).data;
    for (const auto& m : ac_methods) add_scores(ac[m], recon[m], reference.data);

    const auto ref_polar = eval::polar_map_17(reference.data, geom, sample.heart);
    std::map<std::string, std::vector<double>> apes;
    std::map<std::string, eval::PolarMap> maps;
    for (const auto& m : ac_methods) {
      maps[m] = eval::polar_map_17(recon[m], geom, sample.heart);
      apes[m] = eval::ape(maps[m].normalized, ref_polar.normalized);
      report.polar_ape[m].push_back(mean_of(apes[m]));
    }
    for (std::size_t s = 0; s < eval::kSegments; ++s) {
      polar_os << idx << ',' << s + 1 << ',' << fmt(ref_polar.normalized[s]);
      for (const auto& m : ac_methods)
        polar_os << ',' << fmt(maps[m].normalized[s]) << ',' << fmt(apes[m][s]);
      polar_os << '\n';
    }

    const fs::path stem = out / "volumes" / ("sample_" + std::to_string(idx));
    save_ddt(stem.string() + "_ac.ddt", recon["dudocfnet"]);
    save_ddt(stem.string() + "_ac_reference.ddt", reference.data);
    save_ddt(stem.string() + "_mu.ddt", mu_hat);
    save_ddt(stem.string() + "_p_fdfv.ddt", p_hat.data);
    if (cfg.eval.write_images) {
      write_pgm_slices(recon["dudocfnet"], stem.string() + "_ac");
      write_pgm_slices(reference.data, stem.string() + "_ac_reference");
      write_pgm_slices(mu_hat, stem.string() + "_mu");
    }
  }

  write_scores_csv(out / "metrics_proj.csv", test_idx, {"dudocfnet", "baseline_ldlv"}, proj);
  write_scores_csv(out / "metrics_mu.csv", test_idx, {"dudocfnet", "baseline_dataset_mean"}, mu);
  write_scores_csv(out / "metrics_ac.csv", test_idx, ac_methods, ac);

  json summary = json::object();
  for (const auto& [domain, methods] : report.scores) {
    json d = json::object();
    for (const auto& [method, s] : methods) {
      d[method] = json{{"nmse", stats_json(s.nmse)}, {"ssim", stats_json(s.ssim)},
                       {"psnr", stats_json(s.psnr)}};
      if (method != "dudocfnet" && s.nmse.size() > 1) {
        const auto t = eval::paired_ttest(methods.at("dudocfnet").nmse, s.nmse);
        d[method]["nmse_ttest_vs_dudocfnet"] = json{{"t", t.t}, {"dof", t.dof}, {"p", t.p}};
      }
    }
    summary[domain] = d;
  }
  json polar = json::object();
  for (const auto& [m, v] : report.polar_ape) polar[m] = stats_json(v);
  summary["polar_ape"] = polar;
  summary["test_samples"] = test_idx.size();
  auto os = open_out(out / "summary.json");
  os << summary.dump(2) << '\n';
  report.summary = std::move(summary);

  std::printf("test NMSE  proj %.3f%% (LDLV %.3f%%)  mu %.3f%% (mean map %.3f%%)  AC %.3f%%\n",
              mean_of(proj["dudocfnet"].nmse), mean_of(proj["baseline_ldlv"].nmse),
              mean_of(mu["dudocfnet"].nmse), mean_of(mu["baseline_dataset_mean"].nmse),
              mean_of(ac["dudocfnet"].nmse));
  return report;
}

void cmd_recon(const physics::ScannerGeometry& geom, const fs::path& projections,
               const std::optional<fs::path>& mu, int iterations, bool limited_view,
               const fs::path& out_file) {
  if (iterations < 1) throw ConfigError("recon: iterations must be at least 1");
  const physics::ProjectionStack p{load_ddt(projections)};
  physics::check_projection(geom, p.data, "recon projections");
  std::optional<physics::MuMap> mu_map;
  if (mu) {
    mu_map = physics::MuMap{load_ddt(*mu), geom.voxel_mm};
    physics::check_volume(geom, mu_map->data, "recon mu");
    mu_map->validate();
  }
  const auto A = system_matrix(geom);
  std::vector<std::size_t> detectors;
  if (limited_view) detectors = data::limited_view_detectors(geom);
  const auto vol = physics::mlem_reconstruct(geom, A, p, mu_map ? &*mu_map : nullptr, iterations,
                                             nullptr, detectors);
  if (out_file.has_parent_path()) fs::create_directories(out_file.parent_path());
  save_ddt(out_file, vol.data);
  write_pgm_slices(vol.data, out_file.parent_path() / out_file.stem());
}

eval::PolarMap cmd_polar(const physics::ScannerGeometry& geom, const fs::path& volume,
                         const fs::path& meta, std::optional<std::size_t> sample,
                         const fs::path& out_csv) {
  const Tensor vol = load_ddt(volume);
  physics::check_volume(geom, vol, "polar volume");
  const json j = read_json(meta);
  data::MyocardiumShell shell;
  try {
    if (j.contains("samples")) {
      if (!sample) throw ConfigError("polar: a dataset manifest needs --sample");
      const json* found = nullptr;
      for (const auto& s : j.at("samples"))
        if (s.at("index").get<std::size_t>() == *sample) found = &s;
      if (!found) throw ConfigError("polar: sample " + std::to_string(*sample) + " not in manifest");
      shell = data::shell_from_json(found->at("heart"));
    } else if (j.contains("heart")) {
      shell = data::shell_from_json(j.at("heart"));
    } else {
      shell = data::shell_from_json(j);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("polar: ") + e.what());
  }
  const auto map = eval::polar_map_17(vol, geom, shell);
  auto os = open_out(out_csv);
  os << "segment,mean,normalized,rays\n";
  for (std::size_t s = 0; s < eval::kSegments; ++s)
    os << s + 1 << ',' << fmt(map.mean[s]) << ',' << fmt(map.normalized[s]) << ',' << map.rays[s]
       << '\n';
  return map;
}

std::vector<SweepRow> cmd_sweep_iters(const ExperimentConfig& cfg, const fs::path& dataset,
                                      const std::vector<std::size_t>& iterations,
                                      const fs::path& out) {
  if (iterations.empty()) throw ConfigError("sweep-iters: empty iteration list");
  std::vector<SweepRow> rows;
  for (std::size_t n : iterations) {
    if (n == 0) throw ConfigError("sweep-iters: iterations must be at least 1");
    ExperimentConfig c = cfg;
    c.cascade.iterations = n;
    c.validate();
    std::fprintf(stderr, "sweep: %zu iterations\n", n);
    SweepRow row = train_and_score(c, dataset, out / ("iterations_" + std::to_string(n)));
    row.setting = static_cast<double>(n);
    rows.push_back(row);
    write_sweep_csv(out / "sweep_iters.csv", "iterations", rows);
  }
  return rows;
}

std::vector<SweepRow> cmd_sweep_dose(const ExperimentConfig& cfg, const std::vector<double>& rates,
                                     const fs::path& out) {
  if (rates.empty()) throw ConfigError("sweep-dose: empty dose list");
  std::vector<SweepRow> rows;
  for (double r : rates) {
    ExperimentConfig c = cfg;
    c.dataset.dose_rate = r;
    c.validate();
    const fs::path dir = out / ("dose_" + fmt(r));
    std::fprintf(stderr, "sweep: dose rate %g\n", r);
    cmd_simulate(c, dir / "dataset");
    SweepRow row = train_and_score(c, dir / "dataset", dir / "train");
    row.setting = r;
    rows.push_back(row);
    write_sweep_csv(out / "sweep_dose.csv", "dose_rate", rows);
  }
  return rows;
}

void write_sweep_csv(const fs::path& path, const std::string& setting_name,
                     const std::vector<SweepRow>& rows) {
  auto os = open_out(path);
  os << setting_name
     << ",parameters,best_epoch,train_seconds,proj_nmse,proj_ssim,mu_nmse,mu_ssim,"
        "baseline_ldlv_nmse,baseline_mean_mu_nmse\n";
  for (const auto& r : rows)
    os << fmt(r.setting) << ',' << r.parameters << ',' << r.best_epoch << ','
       << fmt(r.train_seconds) << ',' << fmt(r.proj_nmse) << ',' << fmt(r.proj_ssim) << ','
       << fmt(r.mu_nmse) << ',' << fmt(r.mu_ssim) << ',' << fmt(r.baseline_ldlv_nmse) << ','
       << fmt(r.baseline_mean_mu_nmse) << '\n';
}

void write_pgm_slices(const Tensor& volume, const fs::path& prefix) {
  if (volume.rank() != 3) throw DimensionError("pgm", "volume", "expected [X, Y, Z]");
  const std::size_t nx = volume.dim(0), ny = volume.dim(1), nz = volume.dim(2);
  const auto& v = volume.values();
  const double max = *std::max_element(v.begin(), v.end());
  auto at = [&](std::size_t x, std::size_t y, std::size_t z) { return v[(x * ny + y) * nz + z]; };
  std::vector<std::uint8_t> px;
  // Rows run from the top of each view downward.
  for (std::size_t y = ny; y-- > 0;)
    for (std::size_t x = 0; x < nx; ++x) px.push_back(grey(at(x, y, nz / 2), max));
  write_pgm(prefix.string() + "_axial.pgm", nx, ny, px);
  px.clear();
  for (std::size_t z = nz; z-- > 0;)
    for (std::size_t x = 0; x < nx; ++x) px.push_back(grey(at(x, ny / 2, z), max));
  write_pgm(prefix.string() + "_coronal.pgm", nx, nz, px);
  px.clear();
  for (std::size_t z = nz; z-- > 0;)
    for (std::size_t y = 0; y < ny; ++y) px.push_back(grey(at(nx / 2, y, z), max));
  write_pgm(prefix.string() + "_sagittal.pgm", ny, nz, px);
}

}  // namespace dudo::cli
