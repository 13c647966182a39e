#pragma once

#include <array>
#include <stdexcept>

#include "dudo/data/phantom.hpp"

namespace dudo::eval {

class PolarGeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kSegments = 17;

// Sampling frame: rays leave the shell centre at polar angle phi from the
// apex direction and azimuth theta around it. theta = 0 points along the
// anterior reference projected onto the short-axis plane and grows toward
// the septum side given by long_axis x anterior. Each ray contributes the
// maximum of nearest-voxel samples between the centre and beyond the outer
// wall. Rays are assigned by where they cross the mid-wall surface: the
// region past the cavity tip is the apex (17); the rest, from the equatorial
// base plane to the cavity tip, is split into basal (1-6), mid (7-12) and
// apical (13-16) thirds.
struct PolarOptions {
  physics::Vec3 anterior{0.0, 1.0, 0.0};
  double phi_step_deg = 2.0;
  double theta_step_deg = 5.0;
  double radial_step_voxels = 0.25;
  double radial_margin = 1.25;  // rays run to this multiple of the outer wall
};

struct PolarMap {
  std::array<double, kSegments> mean{};        // segment means in volume units
  std::array<double, kSegments> normalized{};  // scaled so the largest is 100
  std::array<std::size_t, kSegments> rays{};   // rays per segment
};

// Segment (0-based) for a ray crossing the mid wall at axial fraction
// `axial` of the cavity length (1 at the cavity tip, larger in the cap) and
// azimuth theta in degrees.
std::size_t polar_segment(double axial, double theta_deg);

PolarMap polar_map_17(const Tensor& volume, const physics::ScannerGeometry& geom,
                      const data::MyocardiumShell& shell, const PolarOptions& opt = {});

}  // namespace dudo::eval
