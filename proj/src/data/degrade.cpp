#include "dudo/data/degrade.hpp"

#include <cmath>
#include <random>

#include "dudo/util/rng.hpp"

namespace dudo::data {

ProjectionStack expected_counts(const ScannerGeometry& geom, const SystemMatrix& A,
                                const Phantom& phantom, double total_counts) {
  if (!(total_counts > 0)) throw std::invalid_argument("expected_counts: total_counts must be positive");
  auto p = physics::forward_project(geom, A, phantom.activity, &phantom.mu);
  double total = 0.0;
  for (double v : p.data.data()) total += v;
  if (!(total > 0)) {
    bool any_activity = false;
    for (double v : phantom.activity.data.data()) any_activity = any_activity || v > 0;
    if (any_activity) throw physics::ConfigError("expected_counts: forward projection is all zero");
    return p;
  }
  for (auto& v : p.data.data()) v *= total_counts / total;
  return p;
}

ProjectionStack simulate_acquisition(const ScannerGeometry& geom, const SystemMatrix& A,
                                     const Phantom& phantom, double total_counts,
                                     std::uint64_t seed) {
  auto p = expected_counts(geom, A, phantom, total_counts);
  auto d = p.data.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] <= 0) {
      d[i] = 0.0;
      continue;
    }
    SplitMix64 gen(derive_seed(seed, i));
    d[i] = static_cast<double>(std::poisson_distribution<long long>(d[i])(gen));
  }
  return p;
}

ProjectionStack apply_low_dose(const ProjectionStack& p, double rate, std::uint64_t seed) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("apply_low_dose: rate must lie in (0, 1]");
  ProjectionStack out{p.data.clone()};
  auto d = out.data.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double c = d[i];
    if (!(c >= 0) || c != std::floor(c))
      throw ContractError("apply_low_dose: counts must be non-negative integers, got " + std::to_string(c));
    if (c == 0 || rate == 1.0) continue;
    SplitMix64 gen(derive_seed(seed, i));
    d[i] = static_cast<double>(std::binomial_distribution<long long>(static_cast<long long>(c), rate)(gen));
  }
  return out;
}

std::vector<std::size_t> limited_view_detectors(const ScannerGeometry& geom) {
  const auto [first, count] = geom.centre_column();
  std::vector<std::size_t> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = first + k;
  return out;
}

ProjectionStack apply_limited_view(const ProjectionStack& p, const ScannerGeometry& geom) {
  physics::check_projection(geom, p.data, "apply_limited_view");
  const auto [first, count] = geom.centre_column();
  ProjectionStack out{p.data.clone()};
  const std::size_t D = geom.n_detectors;
  auto d = out.data.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t det = i % D;
    if (det < first || det >= first + count) d[i] = 0.0;
  }
  return out;
}

Volume compute_boundary(const MuMap& mu) {
  const Tensor& m = mu.data;
  if (m.rank() != 3) throw DimensionError("compute_boundary", "rank", "mu-map must be [Nx, Ny, Nz]");
  const std::size_t n[3] = {m.dim(0), m.dim(1), m.dim(2)};
  Volume beta{Tensor::zeros(m.shape()), mu.voxel_mm};
  const std::size_t stride[3] = {n[1] * n[2], n[2], 1};
  for (std::size_t x = 0; x < n[0]; ++x)
    for (std::size_t y = 0; y < n[1]; ++y)
      for (std::size_t z = 0; z < n[2]; ++z) {
        const std::size_t idx[3] = {x, y, z};
        const std::size_t i = x * stride[0] + y * stride[1] + z;
        double acc = 0.0;
        for (int a = 0; a < 3; ++a) {
          if (n[a] == 1) continue;
          double g;
          if (idx[a] == 0) {
            g = m[i + stride[a]] - m[i];
          } else if (idx[a] + 1 == n[a]) {
            g = m[i] - m[i - stride[a]];
          } else {
            g = 0.5 * (m[i + stride[a]] - m[i - stride[a]]);
          }
          acc += std::abs(g);
        }
        beta.data[i] = acc;
      }
  return beta;
}

}  // namespace dudo::data
