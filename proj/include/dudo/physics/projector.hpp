#pragma once

#include <optional>
#include <vector>

#include "dudo/physics/geometry.hpp"
#include "dudo/physics/system_matrix.hpp"
#include "dudo/tensor/tensor.hpp"

namespace dudo::physics {

// Emission image on the voxel grid, Tensor[Nx, Ny, Nz].
struct Volume {
  Tensor data;
  double voxel_mm = 4.0;

  static Volume zeros(const ScannerGeometry& g);
};

// Linear attenuation coefficients in cm^-1 on the voxel grid.
struct MuMap {
  Tensor data;
  double voxel_mm = 4.0;

  static constexpr double kMaxMu = 0.5;
  // Throws std::domain_error outside [0, kMaxMu].
  void validate() const;
};

// Per-detector projection images, Tensor[U, V, D].
struct ProjectionStack {
  Tensor data;

  static ProjectionStack zeros(const ScannerGeometry& g);
  std::size_t n_detectors() const { return data.dim(2); }
};

void check_volume(const ScannerGeometry& g, const Tensor& t, const char* what);
void check_projection(const ScannerGeometry& g, const Tensor& t, const char* what);

// Per-entry survival probability exp(-integral mu dl) from the midpoint of
// each ray segment back to its pinhole, aligned with A's entries.
std::vector<double> attenuation_factors(const SystemMatrix& A, const MuMap& mu);

// p = A x (with attenuation when mu is given).
ProjectionStack forward_project(const ScannerGeometry& g, const SystemMatrix& A, const Volume& vol,
                                const MuMap* mu = nullptr);
// v = A^T p
Volume back_project(const ScannerGeometry& g, const SystemMatrix& A, const ProjectionStack& p);

struct MlemTrace {
  std::vector<double> log_likelihood;  // after each iteration, index 0 = initial estimate
  std::size_t clamped_ratios = 0;      // bins with zero expectation but positive counts
};

inline constexpr int kDefaultMlemIterations = 30;

// Multiplicative ML-EM from a uniform start over the sensitive voxels. When
// `detectors` is non-empty only those detectors count as acquired; bins of the
// others are left out of the model entirely rather than read as zero counts.
Volume mlem_reconstruct(const ScannerGeometry& g, const SystemMatrix& A, const ProjectionStack& p,
                        const MuMap* mu = nullptr, int iters = kDefaultMlemIterations,
                        MlemTrace* trace = nullptr, std::span<const std::size_t> detectors = {});

// Poisson log-likelihood sum_i p_i log(q_i) - q_i with q = A x, dropping the
// data-only log(p_i!) term.
double poisson_log_likelihood(const SystemMatrix& A, std::span<const double> counts,
                              std::span<const double> x, std::span<const double> entry_scale = {});

}  // namespace dudo::physics
