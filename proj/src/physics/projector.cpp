#include "dudo/physics/projector.hpp"

#include <cmath>
#include <stdexcept>

namespace dudo::physics {

namespace {
constexpr double kRatioEps = 1e-12;
constexpr double kMmPerCm = 10.0;
}  // namespace

Volume Volume::zeros(const ScannerGeometry& g) {
  return Volume{Tensor::zeros({g.grid[0], g.grid[1], g.grid[2]}), g.voxel_mm};
}

ProjectionStack ProjectionStack::zeros(const ScannerGeometry& g) {
  return ProjectionStack{Tensor::zeros({g.pixels_u, g.pixels_v, g.n_detectors})};
}

void MuMap::validate() const {
  for (double v : data.data())
    if (!(v >= 0.0 && v <= kMaxMu))
      throw std::domain_error("mu-map value " + std::to_string(v) + " outside [0, 0.5] cm^-1");
}

void check_volume(const ScannerGeometry& g, const Tensor& t, const char* what) {
  const Shape want{g.grid[0], g.grid[1], g.grid[2]};
  if (!t.defined() || t.shape() != want)
    throw DimensionError(what, "grid",
                         "expected " + shape_str(want) + ", got " +
                             (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

void check_projection(const ScannerGeometry& g, const Tensor& t, const char* what) {
  const Shape want{g.pixels_u, g.pixels_v, g.n_detectors};
  if (!t.defined() || t.rank() != 3)
    throw DimensionError(what, "rank", "projection stacks are [U, V, D]");
  if (t.dim(2) != g.n_detectors)
    throw DimensionError(what, "detector",
                         "expected " + std::to_string(g.n_detectors) + " detectors, got " +
                             std::to_string(t.dim(2)));
  if (t.shape() != want)
    throw DimensionError(what, "pixels", "expected " + shape_str(want) + ", got " + shape_str(t.shape()));
}

std::vector<double> attenuation_factors(const SystemMatrix& A, const MuMap& mu) {
  if (mu.data.numel() != A.cols())
    throw DimensionError("attenuation_factors", "grid", "mu-map does not match the system matrix");
  for (double v : mu.data.data())
    if (!(v >= 0.0)) throw std::domain_error("attenuation_factors: negative mu");
  std::vector<double> factors(A.nnz(), 1.0);
  const auto row_ptr = A.row_ptr();
  const auto cols = A.col_index();
  const auto lengths = A.lengths_mm();
  const auto ray_start = A.ray_start();
  for (std::size_t r = 0; r + 1 < row_ptr.size(); ++r) {
    double path = 0.0;  // mu * length accumulated between the pinhole and this segment, in cm-units
    for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) {
      if (ray_start[e]) path = 0.0;
      const double mu_l = mu.data[cols[e]] * lengths[e] / kMmPerCm;
      factors[e] = std::exp(-(path + 0.5 * mu_l));
      path += mu_l;
    }
  }
  return factors;
}

ProjectionStack forward_project(const ScannerGeometry& g, const SystemMatrix& A, const Volume& vol,
                                const MuMap* mu) {
  check_volume(g, vol.data, "forward_project");
  auto out = ProjectionStack::zeros(g);
  if (mu) {
    check_volume(g, mu->data, "forward_project(mu)");
    const auto factors = attenuation_factors(A, *mu);
    A.forward(vol.data.data(), out.data.data(), factors);
  } else {
    A.forward(vol.data.data(), out.data.data());
  }
  return out;
}

Volume back_project(const ScannerGeometry& g, const SystemMatrix& A, const ProjectionStack& p) {
  check_projection(g, p.data, "back_project");
  auto out = Volume::zeros(g);
  A.adjoint(p.data.data(), out.data.data());
  return out;
}

double poisson_log_likelihood(const SystemMatrix& A, std::span<const double> counts,
                              std::span<const double> x, std::span<const double> entry_scale) {
  std::vector<double> q(A.rows());
  A.forward(x, q, entry_scale);
  double ll = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (counts[i] > 0) ll += counts[i] * std::log(std::max(q[i], kRatioEps));
    ll -= q[i];
  }
  return ll;
}

Volume mlem_reconstruct(const ScannerGeometry& g, const SystemMatrix& A, const ProjectionStack& p,
                        const MuMap* mu, int iters, MlemTrace* trace,
                        std::span<const std::size_t> detectors) {
  check_projection(g, p.data, "mlem_reconstruct");
  if (iters < 1) throw std::invalid_argument("mlem_reconstruct: iters must be >= 1");
  for (double c : p.data.data())
    if (!(c >= 0.0)) throw std::invalid_argument("mlem_reconstruct: negative counts");

  std::vector<double> factors;
  if (mu) {
    check_volume(g, mu->data, "mlem_reconstruct(mu)");
    factors = attenuation_factors(A, *mu);
  }
  std::vector<double> counts(p.data.data().begin(), p.data.data().end());
  if (!detectors.empty()) {
    std::vector<char> keep(g.n_detectors, 0);
    for (auto d : detectors) {
      if (d >= g.n_detectors) throw std::invalid_argument("mlem_reconstruct: detector index out of range");
      keep[d] = 1;
    }
    if (factors.empty()) factors.assign(A.nnz(), 1.0);
    const auto row_ptr = A.row_ptr();
    for (std::size_t r = 0; r < A.rows(); ++r)
      if (!keep[r % g.n_detectors]) {
        counts[r] = 0.0;
        for (std::size_t e = row_ptr[r]; e < row_ptr[r + 1]; ++e) factors[e] = 0.0;
      }
  }
  const std::span<const double> scale = factors;
  const auto sens = A.sensitivity(scale);
  auto est = Volume::zeros(g);
  auto x = est.data.data();
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = sens[j] > 0 ? 1.0 : 0.0;

  std::vector<double> q(A.rows()), ratio(A.rows()), back(A.cols());
  if (trace) trace->log_likelihood.push_back(poisson_log_likelihood(A, counts, x, scale));
  for (int it = 0; it < iters; ++it) {
    A.forward(x, q, scale);
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (q[i] > 0) {
        ratio[i] = counts[i] / q[i];
      } else if (counts[i] == 0) {
        ratio[i] = 0.0;
      } else {
        ratio[i] = counts[i] / kRatioEps;
        if (trace) ++trace->clamped_ratios;
      }
    }
    A.adjoint(ratio, back, scale);
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = sens[j] > 0 ? x[j] / sens[j] * back[j] : 0.0;
    if (trace) trace->log_likelihood.push_back(poisson_log_likelihood(A, counts, x, scale));
  }
  return est;
}

}  // namespace dudo::physics
