#pragma once

#include <cstdint>
#include <vector>

#include "dudo/data/phantom.hpp"
#include "dudo/physics/projector.hpp"
#include "dudo/physics/system_matrix.hpp"

namespace dudo::data {

using physics::ProjectionStack;
using physics::SystemMatrix;

// Attenuated forward projection of the phantom scaled so the bins sum to
// total_counts. Throws physics::ConfigError when the projection is all zero.
ProjectionStack expected_counts(const ScannerGeometry& geom, const SystemMatrix& A,
                                const Phantom& phantom, double total_counts);

// Poisson draw around expected_counts. Zero activity gives zero counts.
ProjectionStack simulate_acquisition(const ScannerGeometry& geom, const SystemMatrix& A,
                                     const Phantom& phantom, double total_counts,
                                     std::uint64_t seed);

// Per-bin Binomial(count, rate) thinning. Each bin draws from its own stream
// keyed by (seed, bin), so masking before or after thinning commutes exactly.
ProjectionStack apply_low_dose(const ProjectionStack& p, double rate, std::uint64_t seed);

// Keeps the centre column of detectors and zeroes the rest.
ProjectionStack apply_limited_view(const ProjectionStack& p, const ScannerGeometry& geom);
std::vector<std::size_t> limited_view_detectors(const ScannerGeometry& geom);

// Voxel-wise |d mu/dx| + |d mu/dy| + |d mu/dz| with central differences in the
// interior and one-sided differences on the faces, per voxel (unitless step).
Volume compute_boundary(const MuMap& mu);

}  // namespace dudo::data
