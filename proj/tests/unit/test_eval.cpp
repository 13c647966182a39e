#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "dudo/eval/metrics.hpp"
#include "dudo/eval/polar.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace dudo;
using namespace dudo::eval;
using dudo::testing::random_tensor;
using namespace dudo::testing::oracles;

namespace {

Tensor positive_random(const Shape& s, std::mt19937_64& rng) {
  Tensor t = random_tensor(s, rng, 1.0, false);
  for (double& v : t.data()) v = std::abs(v) + 0.1;
  return t;
}

}  // namespace

TEST_CASE("voxel metrics match brute force") {
  std::mt19937_64 rng(1);
  for (const Shape& s : {Shape{10, 9, 8}, Shape{16, 16, 19}, Shape{12, 5, 7}}) {
    const Tensor ref = positive_random(s, rng);
    Tensor pred = ref.clone();
    std::normal_distribution<double> nd(0.0, 0.3);
    for (double& v : pred.data()) v += nd(rng);
    CHECK(rel_diff(nmse(pred.values(), ref.values()), brute_nmse(pred.values(), ref.values())) < 1e-12);
    CHECK(rel_diff(psnr(pred.values(), ref.values()), brute_psnr(pred.values(), ref.values())) < 1e-12);
    CHECK(rel_diff(ssim(pred, ref), brute_ssim(pred, ref, 7)) < 1e-12);
    CHECK(rel_diff(ssim(pred, ref, {5, 0.01, 0.03}), brute_ssim(pred, ref, 5)) < 1e-12);
  }
}

TEST_CASE("voxel metric identities") {
  std::mt19937_64 rng(2);
  const Tensor x = positive_random({9, 8, 7}, rng);
  std::vector<double> zero(x.numel(), 0.0), twice(x.values());
  for (double& v : twice) v *= 2;
  CHECK(nmse(x.values(), x.values()) == 0.0);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(nmse(zero, x.values()) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(nmse(twice, x.values()) == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(std::isinf(psnr(x.values(), x.values())));
  CHECK_THROWS_AS(nmse(x.values(), zero), MetricError);
  CHECK_THROWS_AS(nmse(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(ssim(x, Tensor::ones({9, 8, 6})), DimensionError);
}

TEST_CASE("absolute percent error") {
  std::vector<double> v(17), scaled(17);
  for (std::size_t i = 0; i < 17; ++i) {
    v[i] = 40.0 + 3.5 * static_cast<double>(i);
    scaled[i] = 1.1 * v[i];
  }
  for (double e : ape(v, v)) CHECK(e == 0.0);
  for (double e : ape(scaled, v)) CHECK(e == doctest::Approx(10.0).epsilon(1e-12));

  const std::vector<double> ref{100, 80, 50, 60, 70, 90, 95, 85, 65, 55, 75, 88, 92, 66, 77, 99, 81};
  std::vector<double> est(ref);
  est[0] = 90;   // 10%
  est[2] = 55;   // 10%
  est[5] = 99;   // 10%
  est[16] = 40.5;  // 50%
  double mean = 0.0;
  for (double e : ape(est, ref)) mean += e / 17.0;
  CHECK(mean == doctest::Approx(80.0 / 17.0).epsilon(1e-12));
  CHECK_THROWS_AS(ape(est, std::vector<double>(17, 0.0)), MetricError);
}

TEST_CASE("correlation statistics") {
  const std::vector<double> a{1, 2, 3, 4, 5.5};
  const auto same = correlation_stats(a, a);
  CHECK(same.r == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(same.r_squared == doctest::Approx(1.0).epsilon(1e-15));
  std::vector<double> neg(a);
  for (double& v : neg) v = 3 - 2 * v;
  CHECK(correlation_stats(a, neg).r == doctest::Approx(-1.0).epsilon(1e-15));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::vector<double> x(170), y(170);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = 60 + 10 * nd(rng);
    y[i] = 0.8 * x[i] + 6 * nd(rng);
  }
  // Raw-moment form of Pearson's r.
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  const double r = (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
  const auto c = correlation_stats(x, y);
  CHECK(rel_diff(c.r, r) < 1e-12);
  CHECK(rel_diff(c.r_squared, r * r) < 1e-12);
  CHECK_THROWS_AS(correlation_stats(x, std::vector<double>(170, 1.0)), MetricError);
}

TEST_CASE("paired t-test") {
  const std::vector<double> a{12.1, 9.8, 11.4, 10.9, 13.2, 8.7, 10.1, 11.8, 12.6, 9.9};
  const std::vector<double> b{11.2, 9.9, 10.1, 10.4, 12.0, 8.9, 9.2, 11.1, 11.9, 9.0};
  // t from its definition.
  double md = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) md += (a[i] - b[i]) / 10.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) ss += std::pow(a[i] - b[i] - md, 2);
  const double t = md / std::sqrt(ss / 9.0 / 10.0);
  const auto r = paired_ttest(a, b);
  CHECK(rel_diff(r.t, t) < 1e-12);
  CHECK(r.dof == 9.0);
  // Reference values from an independent statistics package.
  CHECK(rel_diff(r.t, 4.333564744353289) < 1e-12);
  CHECK(rel_diff(r.p, 0.0018952008755460928) < 1e-9);
  const auto brute = brute_paired_ttest(a, b);
  CHECK(rel_diff(r.t, brute.t) < 1e-12);
  CHECK(rel_diff(r.p, brute.p) < 1e-12);

  CHECK(paired_ttest(a, a).p == 1.0);
  std::vector<double> shifted(a);
  for (double& v : shifted) v += 0.5;
  const auto c = paired_ttest(shifted, a);
  CHECK(c.p == 0.0);
  CHECK(std::isinf(c.t));
  CHECK(paired_ttest(b, a).p == doctest::Approx(r.p).epsilon(1e-14));
  CHECK_THROWS_AS(paired_ttest(std::vector<double>{1}, std::vector<double>{2}), MetricError);
}

TEST_CASE("group statistics") {
  const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
  const auto s = mean_std(v);
  CHECK(s.mean == 5.0);
  CHECK(s.std == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-15));
  CHECK(mean_std(std::vector<double>{3}).std == 0.0);
}

TEST_CASE("polar segment layout") {
  CHECK(polar_segment(0.0, 0.0) == 0);
  CHECK(polar_segment(0.1, 59.0) == 1);
  CHECK(polar_segment(0.1, 331.0) == 0);
  CHECK(polar_segment(0.1, 329.0) == 5);
  CHECK(polar_segment(0.5, 180.0) == 9);
  CHECK(polar_segment(0.7, 44.0) == 12);
  CHECK(polar_segment(0.7, 46.0) == 13);
  CHECK(polar_segment(0.7, 270.0) == 15);
  CHECK(polar_segment(1.0, 123.0) == 16);
  CHECK(polar_segment(1.5, -10.0) == 16);
}

namespace {

physics::Vec3 rotate_z(const physics::Vec3& p, double deg) {
  const double a = deg * std::numbers::pi / 180.0, c = std::cos(a), s = std::sin(a);
  return {c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
}

}  // namespace

TEST_CASE("uniform shell gives equal segments") {
  const auto g = polar_grid();
  const auto shell = test_shell({1.0, 0.5, -0.2});
  const Tensor v = shell_volume(g, shell, [](const physics::Vec3&) { return 5.0; });
  const auto m = polar_map_17(v, g, shell);
  for (std::size_t k = 0; k < kSegments; ++k) {
    CHECK(m.mean[k] == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(m.normalized[k] == doctest::Approx(100.0).epsilon(1e-6));
    CHECK(m.rays[k] > 0);
  }
}

TEST_CASE("an anterior defect lands in the anterior segments") {
  const auto g = polar_grid();
  const auto shell = test_shell({1.0, 0.5, -0.2});
  const PolarOptions opt;
  // Anterior direction of the sampling frame.
  const auto& n = shell.long_axis;
  const double an = opt.anterior[0] * n[0] + opt.anterior[1] * n[1] + opt.anterior[2] * n[2];
  const physics::Vec3 e1{opt.anterior[0] - an * n[0], opt.anterior[1] - an * n[1], opt.anterior[2] - an * n[2]};
  const Tensor v = shell_volume(g, shell, [&](const physics::Vec3& d) {
    return d[0] * e1[0] + d[1] * e1[1] + d[2] * e1[2] > 0 ? 2.5 : 5.0;
  });
  const auto m = polar_map_17(v, g, shell, opt);
  double top = 0.0;
  for (double x : m.normalized) top = std::max(top, x);
  CHECK(top == doctest::Approx(100.0));
  for (std::size_t seg : {1, 2, 6, 7, 8, 12, 13}) CHECK_MESSAGE(m.normalized[seg - 1] < 60.0, "segment " << seg);
  // Rays on the dividing plane may still touch a defect voxel.
  for (std::size_t seg : {3, 4, 5, 9, 10, 11, 15}) CHECK_MESSAGE(m.normalized[seg - 1] > 95.0, "segment " << seg);
}

TEST_CASE("polar map is rotation consistent") {
  const auto g = polar_grid();
  const physics::Vec3 axis{1.0, 0.5, -0.2};
  const auto base = test_shell(axis);
  PolarOptions opt;
  // Smoothly varying activity defined in the shell frame.
  auto activity = [](const data::MyocardiumShell& s, const physics::Vec3& anterior) {
    return [&s, anterior](const physics::Vec3& d) {
      const auto& n = s.long_axis;
      const double axial = d[0] * n[0] + d[1] * n[1] + d[2] * n[2];
      const double front = d[0] * anterior[0] + d[1] * anterior[1] + d[2] * anterior[2];
      return 4.0 + 0.04 * axial + 0.03 * front;
    };
  };
  const Tensor v0 = shell_volume(g, base, activity(base, opt.anterior));
  const auto m0 = polar_map_17(v0, g, base, opt);

  for (double deg : {35.0, 120.0}) {
    auto turned = base;
    turned.long_axis = rotate_z(base.long_axis, deg);
    turned.centre = base.centre;
    PolarOptions topt = opt;
    topt.anterior = rotate_z(opt.anterior, deg);
    const Tensor v1 = shell_volume(g, turned, activity(turned, topt.anterior));
    const auto m1 = polar_map_17(v1, g, turned, topt);
    for (std::size_t k = 0; k < kSegments; ++k)
      CHECK_MESSAGE(rel_diff(m1.mean[k], m0.mean[k]) < 0.01, "segment " << k + 1 << " at " << deg);
  }
}

TEST_CASE("polar map errors") {
  const auto g = polar_grid();
  auto shell = test_shell({1.0, 0.5, -0.2});
  const Tensor v = shell_volume(g, shell, [](const physics::Vec3&) { return 5.0; });
  auto flat = shell;
  flat.inner_radius = flat.outer_radius;
  CHECK_THROWS_AS(polar_map_17(v, g, flat), PolarGeometryError);
  PolarOptions parallel;
  parallel.anterior = shell.long_axis;
  CHECK_THROWS_AS(polar_map_17(v, g, shell, parallel), PolarGeometryError);
  // A shell far outside the volume leaves every segment without samples.
  auto away = shell;
  away.centre = {500, 500, 500};
  CHECK_THROWS_AS(polar_map_17(v, g, away), PolarGeometryError);
  CHECK_THROWS_AS(polar_map_17(Tensor::zeros({4, 4, 4}), g, shell), DimensionError);
}
