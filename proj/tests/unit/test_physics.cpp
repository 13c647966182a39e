#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "dudo/physics/geometry.hpp"
#include "dudo/physics/projector.hpp"
#include "dudo/physics/system_matrix.hpp"
#include "dudo/tensor/ops.hpp"

using namespace dudo;
using namespace dudo::physics;

namespace {

const SystemMatrix& toy_matrix() {
  static const SystemMatrix A = SystemMatrix::build(ScannerGeometry::toy());
  return A;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

TEST_CASE("geometry presets") {
  for (const auto& g : {ScannerGeometry::toy(), ScannerGeometry::desk(), ScannerGeometry::full_scale()}) {
    g.validate();
    CHECK(g.detectors().size() == 19);
    CHECK(g.centre_column() == std::pair<std::size_t, std::size_t>{5, 9});
  }
  CHECK(ScannerGeometry::toy().hash() != ScannerGeometry::desk().hash());
  CHECK(ScannerGeometry::toy().hash() == ScannerGeometry::toy().hash());
  // Every aperture looks at the volume centre from outside the volume.
  const auto g = ScannerGeometry::desk();
  for (const auto& d : g.detectors()) {
    const double r = std::sqrt(d.aperture[0] * d.aperture[0] + d.aperture[1] * d.aperture[1] +
                               d.aperture[2] * d.aperture[2]);
    CHECK(r == doctest::Approx(1.25 * g.half_diagonal_mm()));
    for (int a = 0; a < 3; ++a) CHECK(d.normal[a] == doctest::Approx(-d.aperture[a] / r));
  }
}

TEST_CASE("degenerate geometry is rejected") {
  auto g = ScannerGeometry::toy();
  g.column_layout = {5, 9, 4};
  CHECK_THROWS_AS(g.validate(), ConfigError);
  g = ScannerGeometry::toy();
  g.aperture_distance_ratio = 0.1;
  CHECK_THROWS_AS(g.validate(), ConfigError);
  CHECK_THROWS_AS(SystemMatrix::build(g), ConfigError);
  g = ScannerGeometry::toy();
  g.pixels_u = 0;
  CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("trace_ray chord lengths") {
  const std::array<std::size_t, 3> grid{4, 4, 4};
  double total = 0.0;
  std::size_t count = 0;
  // Axis-aligned ray along x through voxel centres: 4 voxels, 2 mm each.
  trace_ray({-10, 1, 1}, {1, 0, 0}, grid, 2.0, [&](std::size_t, double t0, double t1) {
    total += t1 - t0;
    ++count;
  });
  CHECK(count == 4);
  CHECK(total == doctest::Approx(8.0));

  // Body diagonal of the cube: length 8 * sqrt(3).
  total = 0.0;
  const double s = 1.0 / std::sqrt(3.0);
  trace_ray({-5, -5, -5}, {s, s, s}, grid, 2.0, [&](std::size_t, double t0, double t1) {
    CHECK(t1 >= t0);
    total += t1 - t0;
  });
  CHECK(total == doctest::Approx(8.0 * std::sqrt(3.0)));

  count = 0;
  trace_ray({-10, 20, 0}, {1, 0, 0}, grid, 2.0, [&](std::size_t, double, double) { ++count; });
  CHECK(count == 0);
}

TEST_CASE("system matrix adjoint identity") {
  std::mt19937_64 rng(17);
  const auto& A = toy_matrix();
  const auto g = ScannerGeometry::toy();
  CHECK(A.rows() == g.n_bins());
  CHECK(A.cols() == g.n_voxels());
  for (int trial = 0; trial < 3; ++trial) {
    auto x = random_vec(A.cols(), rng);
    auto y = random_vec(A.rows(), rng);
    std::vector<double> Ax(A.rows()), Aty(A.cols());
    A.forward(x, Ax);
    A.adjoint(y, Aty);
    const double lhs = dot(Ax, y), rhs = dot(x, Aty);
    CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-10);
  }
  const auto desk = ScannerGeometry::desk();
  const auto B = SystemMatrix::build(desk);
  auto x = random_vec(B.cols(), rng);
  auto y = random_vec(B.rows(), rng);
  std::vector<double> Bx(B.rows()), Bty(B.cols());
  B.forward(x, Bx);
  B.adjoint(y, Bty);
  CHECK(std::abs(dot(Bx, y) - dot(x, Bty)) / std::abs(dot(Bx, y)) < 1e-10);
}

TEST_CASE("forward projection is linear and matches dense columns") {
  std::mt19937_64 rng(23);
  const auto g = ScannerGeometry::toy();
  const auto& A = toy_matrix();
  Volume v1 = Volume::zeros(g), v2 = Volume::zeros(g), sum = Volume::zeros(g);
  auto r1 = random_vec(g.n_voxels(), rng), r2 = random_vec(g.n_voxels(), rng);
  for (std::size_t i = 0; i < g.n_voxels(); ++i) {
    v1.data[i] = r1[i];
    v2.data[i] = r2[i];
    sum.data[i] = 2.0 * r1[i] - 0.5 * r2[i];
  }
  auto p1 = forward_project(g, A, v1), p2 = forward_project(g, A, v2), ps = forward_project(g, A, sum);
  for (std::size_t i = 0; i < g.n_bins(); ++i)
    CHECK(ps.data[i] == doctest::Approx(2.0 * p1.data[i] - 0.5 * p2.data[i]).epsilon(1e-12));

  const auto dense = A.dense();
  const std::size_t hot = (8 * 16 + 8) * 8 + 4;
  Volume h = Volume::zeros(g);
  h.data[hot] = 1.0;
  auto ph = forward_project(g, A, h);
  double col_sum = 0.0;
  for (std::size_t r = 0; r < A.rows(); ++r) {
    CHECK(ph.data[r] == dense[r * A.cols() + hot]);
    col_sum += ph.data[r];
  }
  CHECK(col_sum > 0.0);
}

TEST_CASE("back projection of ones equals sensitivity") {
  const auto g = ScannerGeometry::toy();
  const auto& A = toy_matrix();
  ProjectionStack p{Tensor::ones({g.pixels_u, g.pixels_v, g.n_detectors})};
  auto bp = back_project(g, A, p);
  const auto sens = A.sensitivity();
  for (std::size_t j = 0; j < g.n_voxels(); ++j) CHECK(bp.data[j] == doctest::Approx(sens[j]).epsilon(1e-12));
}

TEST_CASE("shape mismatches name the axis") {
  const auto g = ScannerGeometry::toy();
  const auto& A = toy_matrix();
  try {
    back_project(g, A, ProjectionStack{Tensor::zeros({16, 16, 18})});
    FAIL("expected dimension error");
  } catch (const DimensionError& e) {
    CHECK(e.axis() == "detector");
  }
  CHECK_THROWS_AS(forward_project(g, A, Volume{Tensor::zeros({16, 16, 9}), 4.0}), DimensionError);
}

TEST_CASE("attenuation") {
  const auto g = ScannerGeometry::toy();
  const auto& A = toy_matrix();
  std::mt19937_64 rng(29);
  Volume vol = Volume::zeros(g);
  auto r = random_vec(g.n_voxels(), rng);
  for (std::size_t i = 0; i < r.size(); ++i) vol.data[i] = r[i];

  MuMap zero{Tensor::zeros({16, 16, 8}), 4.0};
  auto a = forward_project(g, A, vol), b = forward_project(g, A, vol, &zero);
  CHECK(a.data.values() == b.data.values());

  MuMap mu{Tensor({16, 16, 8}, 0.0), 4.0};
  for (std::size_t i = 0; i < g.n_voxels(); ++i) mu.data[i] = 0.3 * r[(i * 7) % r.size()];
  MuMap mu2{ops::scale(mu.data, 2.0), 4.0};
  const auto f1 = attenuation_factors(A, mu), f2 = attenuation_factors(A, mu2);
  for (std::size_t e = 0; e < f1.size(); ++e) {
    CHECK(f1[e] <= 1.0);
    CHECK(f2[e] == doctest::Approx(f1[e] * f1[e]).epsilon(1e-12));
  }
  auto att = forward_project(g, A, vol, &mu);
  for (std::size_t i = 0; i < g.n_bins(); ++i) CHECK(att.data[i] <= a.data[i] + 1e-12);

  MuMap bad{Tensor({16, 16, 8}, 0.6), 4.0};
  CHECK_THROWS_AS(bad.validate(), std::domain_error);
}

TEST_CASE("single ray survival is exp(-mu L)") {
  // One bin seeing three voxels in a row, 5 mm each, mu = 0.2 cm^-1.
  auto A = SystemMatrix::from_triplets(1, 3, 0, {0, 0, 0}, {0, 1, 2}, {1, 1, 1}, {5, 5, 5});
  MuMap mu{Tensor({3}, 0.2), 5.0};
  const auto f = attenuation_factors(A, mu);
  CHECK(f[0] == doctest::Approx(std::exp(-0.2 * 0.25)));
  CHECK(f[1] == doctest::Approx(std::exp(-0.2 * 0.75)));
  CHECK(f[2] == doctest::Approx(std::exp(-0.2 * 1.25)));
  // A source at the far end of the 1.5 cm chord exits with exp(-mu L) when
  // its own voxel is counted in full.
  CHECK(f[2] * std::exp(-0.2 * 0.25) == doctest::Approx(std::exp(-0.2 * 1.5)));

  CHECK_THROWS(SystemMatrix::from_triplets(2, 3, 0, {1, 0}, {0, 1}, {1, 1}, {1, 1}));
  CHECK_THROWS(SystemMatrix::from_triplets(1, 3, 0, {0}, {3}, {1}, {1}));
  CHECK_THROWS(SystemMatrix::from_triplets(1, 3, 0, {0}, {0}, {-1}, {1}));
}

TEST_CASE("ML-EM on an identity system") {
  const std::size_t n = 6;
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  auto A = SystemMatrix::from_triplets(n, n, 0, idx, idx, std::vector<double>(n, 1.0),
                                       std::vector<double>(n, 1.0));
  const std::vector<double> p{3, 0, 7, 1.5, 2, 10};
  // One multiplicative update from x = 1: x1 = x0 / s * A^T(p / A x0) = p.
  std::vector<double> q(n), ratio(n), back(n);
  std::vector<double> x(n, 1.0);
  A.forward(x, q);
  for (std::size_t i = 0; i < n; ++i) ratio[i] = p[i] / q[i];
  A.adjoint(ratio, back);
  for (std::size_t i = 0; i < n; ++i) CHECK(back[i] == p[i]);
}

TEST_CASE("ML-EM reconstruction on the toy scanner") {
  const auto g = ScannerGeometry::toy();
  const auto& A = toy_matrix();
  Volume truth = Volume::zeros(g);
  for (std::size_t x = 4; x < 12; ++x)
    for (std::size_t y = 4; y < 12; ++y)
      for (std::size_t z = 2; z < 6; ++z) truth.data[(x * 16 + y) * 8 + z] = (x + y + z) % 3 + 1.0;
  auto p = forward_project(g, A, truth);
  MlemTrace trace;
  auto rec = mlem_reconstruct(g, A, p, nullptr, 30, &trace);
  CHECK(trace.log_likelihood.size() == 31);
  for (std::size_t i = 1; i < trace.log_likelihood.size(); ++i)
    CHECK(trace.log_likelihood[i] >= trace.log_likelihood[i - 1] - 1e-9 * std::abs(trace.log_likelihood[i]));
  for (double v : rec.data.data()) CHECK(v >= 0.0);
  CHECK(trace.clamped_ratios == 0);

  // Counts where the model predicts nothing are clamped, not divided by zero.
  auto one = ProjectionStack::zeros(g);
  one.data[0] = 5.0;
  MlemTrace t2;
  auto r2 = mlem_reconstruct(g, A, one, nullptr, 2, &t2);
  for (double v : r2.data.data()) CHECK(std::isfinite(v));

  auto neg = ProjectionStack::zeros(g);
  neg.data[3] = -1.0;
  CHECK_THROWS_AS(mlem_reconstruct(g, A, neg), std::invalid_argument);
  CHECK_THROWS_AS(mlem_reconstruct(g, A, p, nullptr, 0), std::invalid_argument);
}

TEST_CASE("system matrix cache round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "dudo_test_cache";
  std::filesystem::remove_all(dir);
  const auto g = ScannerGeometry::toy();
  const auto first = load_or_build(g, dir);
  CHECK(std::filesystem::exists(dir));
  const auto second = load_or_build(g, dir);
  CHECK(second.nnz() == first.nnz());
  CHECK(second.geometry_hash() == g.hash());
  CHECK(std::equal(first.weights().begin(), first.weights().end(), second.weights().begin()));
  CHECK(std::equal(first.lengths_mm().begin(), first.lengths_mm().end(), second.lengths_mm().begin()));
  CHECK(std::equal(first.col_index().begin(), first.col_index().end(), second.col_index().begin()));
  std::filesystem::remove_all(dir);
}
