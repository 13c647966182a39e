#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "dudo/tensor/tape.hpp"
#include "dudo/train/checkpoint.hpp"
#include "dudo/train/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/micro.hpp"

using namespace dudo;
using namespace dudo::train;
using dudo::testing::grad_check;
using dudo::testing::micro_config;
using dudo::testing::micro_geometry;
using dudo::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

double brute_l1(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

nn::IterationOutput random_outputs(const Shape& proj, const Shape& vol, std::mt19937_64& rng) {
  return {random_tensor(proj, rng, 1.0, false), random_tensor(proj, rng, 1.0, false),
          random_tensor(vol, rng, 1.0, false), random_tensor(vol, rng, 1.0, false),
          random_tensor(vol, rng, 1.0, false)};
}

Labels random_labels(const Shape& proj, const Shape& vol, std::mt19937_64& rng) {
  return {random_tensor(proj, rng, 1.0, false), random_tensor(proj, rng, 1.0, false),
          random_tensor(vol, rng, 1.0, false), random_tensor(vol, rng, 1.0, false)};
}

// Toy volume with 8x8 detectors: the smallest scanner whose phantoms still
// hold a myocardial wall.
physics::ScannerGeometry small_geometry() {
  auto g = physics::ScannerGeometry::toy();
  g.pixels_u = g.pixels_v = 8;
  return g;
}

struct SmallData {
  physics::ScannerGeometry geom = small_geometry();
  physics::SystemMatrix A = physics::SystemMatrix::build(geom);
  std::vector<Example> examples;

  explicit SmallData(std::size_t n, double total_counts = 5e4) {
    data::DatasetConfig cfg;
    cfg.total_counts = total_counts;
    for (std::size_t k = 0; k < n; ++k)
      examples.push_back(make_example(data::make_sample(geom, A, cfg, 100 + k), k, geom, cfg.total_counts));
  }
};

nn::CascadeConfig small_cascade(std::size_t n) {
  nn::CascadeConfig c;
  c.iterations = n;
  c.net = micro_config();
  c.seed = 3;
  return c;
}

std::vector<double> flat_parameters(nn::Cascade& c) {
  std::vector<double> out;
  c.visit(nn::Visitor{[&](const std::string&, Tensor& t) {
                        out.insert(out.end(), t.values().begin(), t.values().end());
                      },
                      nullptr});
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dudo_test_train_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("loss terms decompose exactly") {
  std::mt19937_64 rng(1);
  const Shape proj{2, 1, 4, 4, 5}, vol{2, 1, 6, 6, 4};
  const auto o = random_outputs(proj, vol, rng);
  const auto y = random_labels(proj, vol, rng);

  const double lp = projection_loss(o.p_ldfv, o.p_fdfv, y.p_ldfv, y.p_fdfv).item();
  CHECK(lp == ops::l1_loss(o.p_ldfv, y.p_ldfv).item() + ops::l1_loss(o.p_fdfv, y.p_fdfv).item());
  CHECK(lp == doctest::Approx(brute_l1(o.p_ldfv, y.p_ldfv) + brute_l1(o.p_fdfv, y.p_fdfv)).epsilon(1e-14));

  const double li = image_loss(o.beta, o.mu0, o.mu, y.beta, y.mu).item();
  CHECK(li == ops::l1_loss(o.beta, y.beta).item() + ops::l1_loss(o.mu0, y.mu).item() +
                  ops::l1_loss(o.mu, y.mu).item());
  CHECK(li == doctest::Approx(brute_l1(o.beta, y.beta) + brute_l1(o.mu0, y.mu) + brute_l1(o.mu, y.mu))
                  .epsilon(1e-14));

  CHECK(projection_loss(y.p_ldfv, y.p_fdfv, y.p_ldfv, y.p_fdfv).item() == 0.0);
  CHECK(image_loss(y.beta, y.mu, y.mu, y.beta, y.mu).item() == 0.0);
}

TEST_CASE("total loss is the weighted sum over iterations") {
  const LossWeights defaults;
  CHECK(defaults.projection == 1.0);
  CHECK(defaults.image == 0.2);

  std::mt19937_64 rng(2);
  const Shape proj{1, 1, 4, 4, 5}, vol{1, 1, 6, 6, 4};
  const std::vector<nn::IterationOutput> outs{random_outputs(proj, vol, rng),
                                              random_outputs(proj, vol, rng)};
  const auto y = random_labels(proj, vol, rng);
  auto term = [&](std::size_t i, const LossWeights& w) {
    const auto& o = outs[i];
    return w.projection * projection_loss(o.p_ldfv, o.p_fdfv, y.p_ldfv, y.p_fdfv).item() +
           w.image * image_loss(o.beta, o.mu0, o.mu, y.beta, y.mu).item();
  };

  const auto t = total_loss(outs, y, defaults);
  REQUIRE(t.projection.size() == 2);
  CHECK(t.total.item() == term(0, defaults) + term(1, defaults));
  CHECK(t.total.item() == t.projection[0] + 0.2 * t.image[0] + (t.projection[1] + 0.2 * t.image[1]));

  const LossWeights proj_only{1.0, 0.0};
  CHECK(total_loss(outs, y, proj_only).total.item() == t.projection[0] + t.projection[1]);

  const std::vector<nn::IterationOutput> single{outs[0]};
  CHECK(total_loss(single, y, defaults).total.item() == term(0, defaults));

  CHECK_THROWS_AS((LossWeights{-1.0, 0.2}.validate()), physics::ConfigError);
  CHECK_THROWS_AS(total_loss({}, y, defaults), ContractError);
  const Labels wrong{y.p_ldfv, y.p_fdfv, y.beta, random_tensor({1, 1, 6, 6, 3}, rng, 1.0, false)};
  CHECK_THROWS_AS(total_loss(outs, wrong, defaults), DimensionError);
}

TEST_CASE("total loss gradient on a micro-cascade") {
  const auto g = micro_geometry();
  const auto A = physics::SystemMatrix::build(g);
  nn::Cascade c(small_cascade(2), g, A);
  std::mt19937_64 rng(3);
  const Shape proj{2, 1, g.pixels_u, g.pixels_v, g.n_detectors}, vol{2, 1, g.grid[0], g.grid[1], g.grid[2]};
  const Tensor p = random_tensor(proj, rng, 1.0, false);
  const Tensor s = random_tensor(vol, rng, 1.0, false);
  const auto y = random_labels(proj, vol, rng);
  std::vector<Tensor> leaves;
  c.visit(nn::Visitor{[&](const std::string&, Tensor& t) { leaves.push_back(t); }, nullptr});
  auto objective = [&] {
    return total_loss(c.forward(p, s, nn::NormMode::kTrain), y, LossWeights{}).total;
  };
  const auto r = grad_check(objective, leaves, 1e-6, 4);
  CHECK(r.rel_error < 1e-4);
  CHECK(r.analytic_norm > 0.0);
}

TEST_CASE("Adam update rule") {
  const TrainConfig defaults;
  CHECK(defaults.adam.beta1 == 0.9);
  CHECK(defaults.adam.beta2 == 0.999);
  CHECK(defaults.adam.eps == 1e-8);
  CHECK(defaults.lr_projection == 1e-3);
  CHECK(defaults.lr_image == 1e-4);
  CHECK(defaults.batch_size == 2);
  CHECK(defaults.epochs == 50);
  CHECK(defaults.patience == 10);
  CHECK(defaults.clip_norm == 10.0);

  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor w({5}, std::vector<double>{1, -2, 3, 0.5, 0}, true);
    Adam opt({{"g", 1e-2, {w}}});
    for (int k = 0; k < 10; ++k) {
      opt.zero_grad();
      opt.step();
    }
    CHECK(w.values() == std::vector<double>{1, -2, 3, 0.5, 0});
  }

  SUBCASE("constant gradient moves by lr * sign(g)") {
    Tensor w({3}, std::vector<double>{0, 0, 0}, true);
    const double lr = 1e-3;
    Adam opt({{"g", lr, {w}}});
    const std::vector<double> g{0.7, -3.0, 1e-3};
    std::vector<double> before;
    for (int k = 0; k < 2000; ++k) {
      opt.zero_grad();
      std::copy(g.begin(), g.end(), w.grad().begin());
      before = w.values();
      opt.step();
    }
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(w[i] - before[i] == doctest::Approx(-lr * (g[i] > 0 ? 1 : -1)).epsilon(1e-4));
  }

  SUBCASE("matches a scalar reference on varying gradients") {
    Tensor w({2}, std::vector<double>{0.3, -0.1}, true);
    Adam opt({{"g", 0.05, {w}}});
    double ref[2] = {0.3, -0.1}, m[2] = {0, 0}, v[2] = {0, 0};
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    for (int t = 1; t <= 20; ++t) {
      opt.zero_grad();
      for (int i = 0; i < 2; ++i) {
        const double g = nd(rng);
        w.grad()[i] = g;
        m[i] = 0.9 * m[i] + 0.1 * g;
        v[i] = 0.999 * v[i] + 0.001 * g * g;
        const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
        ref[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
      }
      opt.step();
      CHECK(w[0] == doctest::Approx(ref[0]).epsilon(1e-13));
      CHECK(w[1] == doctest::Approx(ref[1]).epsilon(1e-13));
    }
    CHECK(opt.steps() == 20);
  }

  SUBCASE("gradient clipping") {
    Tensor a({2}, std::vector<double>{0, 0}, true), b({1}, std::vector<double>{0}, true);
    a.zero_grad();
    b.zero_grad();
    a.grad()[0] = 30;
    a.grad()[1] = 40;
    b.grad()[0] = 120;
    CHECK(clip_grad_norm({a, b}, 10.0) == doctest::Approx(130.0));
    CHECK(a.grad()[0] == doctest::Approx(30.0 / 13));
    CHECK(b.grad()[0] == doctest::Approx(120.0 / 13));
    CHECK(clip_grad_norm({a, b}, 100.0) == doctest::Approx(10.0));
    CHECK(a.grad()[0] == doctest::Approx(30.0 / 13));
  }
}

TEST_CASE("parameter groups split the domains") {
  const auto g = micro_geometry();
  const auto A = physics::SystemMatrix::build(g);
  nn::Cascade c(small_cascade(2), g, A);
  const auto groups = parameter_groups(c, TrainConfig{});
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].lr == 1e-3);
  CHECK(groups[1].lr == 1e-4);
  CHECK(groups[0].lr != groups[1].lr);
  std::size_t n = 0, n_tsp = 0;
  for (const auto& grp : groups)
    for (const auto& t : grp.params) n += t.numel();
  for (const auto& t : groups[0].params) n_tsp += t.numel();
  CHECK(n == c.parameter_count());
  std::size_t expect_tsp = 0;
  for (auto& net : c.tsp()) expect_tsp += nn::count_parameters(net);
  CHECK(n_tsp == expect_tsp);
}

TEST_CASE("training examples are normalized consistently") {
  const auto geom = small_geometry();
  const auto A = physics::SystemMatrix::build(geom);
  data::DatasetConfig cfg;
  cfg.total_counts = 5e4;
  const auto s = data::make_sample(geom, A, cfg, 9);
  const auto e = make_example(s, 4, geom, cfg.total_counts);
  CHECK(e.index == 4);
  CHECK(e.full_dose_scale == doctest::Approx(5e4 / static_cast<double>(geom.n_bins())));
  CHECK(e.low_dose_scale == doctest::Approx(e.full_dose_scale * 0.1));
  for (std::size_t i = 0; i < e.p_fdfv.numel(); i += 7) {
    CHECK(e.p_fdfv[i] * e.full_dose_scale == doctest::Approx(s.p_fdfv.data[i]));
    CHECK(e.p_ldlv[i] * e.low_dose_scale == doctest::Approx(s.p_ldlv.data[i]));
  }
  double mean = 0.0;
  for (double v : e.s_ldlv.values()) mean += v;
  CHECK(mean / static_cast<double>(e.s_ldlv.numel()) == doctest::Approx(1.0));
  CHECK(e.mu[100] == doctest::Approx(kMuScale * s.mu.data[100]));

  const std::vector<Example> ex{e, e};
  const std::vector<std::size_t> members{1, 0};
  const Batch b = make_batch(ex, members);
  CHECK(b.p_ldlv.shape() == Shape{2, 1, geom.pixels_u, geom.pixels_v, geom.n_detectors});
  CHECK(b.s_ldlv.shape() == Shape{2, 1, geom.grid[0], geom.grid[1], geom.grid[2]});
  CHECK(batch_item(b.labels.mu, 1).values() == e.mu.values());
}

TEST_CASE("two samples are overfit in 300 steps") {
  // High counts keep the label noise, which no model can fit, far below the
  // initial error.
  SmallData d(2, 1e7);
  nn::CascadeConfig cc = small_cascade(2);
  cc.net = nn::NetConfig{};
  nn::Cascade c(cc, d.geom, d.A);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.lr_projection = cfg.lr_image = 3e-3;
  double first = 0.0;
  cfg.on_epoch = [&](const EpochLog& e) {
    if (e.epoch == 1) first = e.train_loss;
  };
  const auto r = train::train(c, d.examples, {}, cfg);
  REQUIRE(r.log.size() == 300);
  CHECK(std::isfinite(first));
  MESSAGE("initial loss " << first << ", final " << r.log.back().train_loss);
  CHECK(r.log.back().train_loss < 0.1 * first);
}

TEST_CASE("training is reproducible and keeps the best epoch") {
  SmallData d(6);
  const std::vector<Example> tr(d.examples.begin(), d.examples.begin() + 4);
  const std::vector<Example> va(d.examples.begin() + 4, d.examples.end());
  TrainConfig cfg;
  cfg.epochs = 3;
  const fs::path out1 = scratch_dir("a"), out2 = scratch_dir("b");
  nn::Cascade c1(small_cascade(2), d.geom, d.A), c2(small_cascade(2), d.geom, d.A);
  const auto r1 = train::train(c1, tr, va, cfg, out1);
  const auto r2 = train::train(c2, tr, va, cfg, out2);
  REQUIRE(r1.log.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r1.log[k].train_loss == r2.log[k].train_loss);
    CHECK(r1.log[k].val_nmse_proj == r2.log[k].val_nmse_proj);
    CHECK(r1.log[k].val_nmse_mu == r2.log[k].val_nmse_mu);
  }
  CHECK(flat_parameters(c1) == flat_parameters(c2));

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const std::string csv = slurp(out1 / "metrics.csv");
  CHECK(csv.rfind("epoch,train_loss,val_nmse_proj,val_nmse_mu\n", 0) == 0);
  CHECK(csv == slurp(out2 / "metrics.csv"));

  // The restored parameters are those of the best validation epoch.
  const auto [vp, vm] = validation_nmse(c1, va, 2);
  const auto& best = r1.log[r1.best_epoch - 1];
  CHECK(vp == best.val_nmse_proj);
  CHECK(vm == best.val_nmse_mu);
  CHECK(best.val_nmse_proj + best.val_nmse_mu == r1.best_score);
  for (const auto& e : r1.log) CHECK(e.val_nmse_proj + e.val_nmse_mu >= r1.best_score);

  // A frozen model never improves after epoch 1, so patience ends the run.
  TrainConfig frozen = cfg;
  frozen.epochs = 20;
  frozen.patience = 2;
  frozen.lr_projection = frozen.lr_image = 0.0;
  nn::Cascade c3(small_cascade(1), d.geom, d.A);
  const auto r3 = train::train(c3, tr, va, frozen);
  CHECK(r3.best_epoch == 1);
  CHECK(r3.log.size() <= 3);
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("checkpoint round trip") {
  SmallData d(2);
  nn::CascadeConfig cc = small_cascade(2);
  cc.ablation.no_mlf = true;
  nn::Cascade c(cc, d.geom, d.A);
  TrainConfig cfg;
  cfg.epochs = 1;
  const fs::path out = scratch_dir("ckpt");
  train::train(c, d.examples, {}, cfg, out);
  const auto loaded = load_checkpoint(out / "checkpoint", d.geom, d.A);
  CHECK(loaded.manifest.at("cascade").at("ablation").at("no_mlf").get<bool>());
  CHECK(loaded.manifest.at("parameter_count").get<std::size_t>() == c.parameter_count());
  CHECK(fs::exists(out / "checkpoint" / "iter1.tsp.enc.input.weight.ddt"));
  CHECK(fs::exists(out / "checkpoint" / "iter2.bda.sbe.norm1.running_mean.ddt"));
  CHECK(loaded.cascade->config().iterations == 2);

  // Stored tensors are f32, so compare against the rounded originals.
  std::vector<double> expect = flat_parameters(c);
  for (double& v : expect) v = round_f32(v);
  CHECK(flat_parameters(*loaded.cascade) == expect);

  const auto a = predict(c, d.examples, 2);
  const auto b = predict(*loaded.cascade, d.examples, 2);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(max_abs_diff(a[k].mu, b[k].mu) < 1e-4);
    CHECK(max_abs_diff(a[k].p_fdfv, b[k].p_fdfv) < 1e-4);
  }

  auto other = small_geometry();
  other.fov_ratio = 0.7;
  const auto A2 = physics::SystemMatrix::build(other);
  CHECK_THROWS_AS(load_checkpoint(out / "checkpoint", other, A2), physics::ConfigError);
  CHECK_THROWS_AS(load_checkpoint(out / "missing", d.geom, d.A), IoError);
  fs::remove_all(out);
}

TEST_CASE("configs reject unknown keys") {
  CHECK_THROWS_AS(cascade_config_from_json(nlohmann::json{{"iteration", 2}}), physics::ConfigError);
  CHECK_THROWS_AS(cascade_config_from_json(nlohmann::json{{"net", {{"width", 2}}}}), physics::ConfigError);
  CHECK_THROWS_AS(cascade_config_from_json(nlohmann::json{{"iterations", 0}}), physics::ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"lr", 1}}), physics::ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"batch_size", 0}}), physics::ConfigError);
  nn::CascadeConfig c;
  c.iterations = 3;
  c.ablation.no_bda_stage2 = true;
  c.net = nn::NetConfig::full_scale();
  const auto back = cascade_config_from_json(cascade_config_to_json(c));
  CHECK(cascade_config_to_json(back) == cascade_config_to_json(c));
  TrainConfig t;
  t.lr_image = 5e-4;
  CHECK(train_config_to_json(train_config_from_json(train_config_to_json(t))) == train_config_to_json(t));
}

TEST_CASE("a non-finite loss aborts with a batch dump") {
  SmallData d(2);
  d.examples[1].p_fdfv[5] = std::nan("");
  nn::Cascade c(small_cascade(1), d.geom, d.A);
  TrainConfig cfg;
  cfg.epochs = 1;
  const fs::path out = scratch_dir("nan");
  try {
    train::train(c, d.examples, {}, cfg, out);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(e.dump() == out / "nan_batch");
    CHECK(fs::exists(e.dump() / "p_ldlv.ddt"));
    CHECK(fs::exists(e.dump() / "batch.json"));
  }
  fs::remove_all(out);
}
