#pragma once

#include <cstdint>

#include "dudo/physics/geometry.hpp"
#include "dudo/physics/projector.hpp"

namespace dudo::data {

using physics::MuMap;
using physics::ScannerGeometry;
using physics::Vec3;
using physics::Volume;

// Attenuation coefficients (cm^-1) for the phantom's tissue classes.
namespace tissue {
inline constexpr double kSoft = 0.15;
inline constexpr double kLung = 0.04;
inline constexpr double kBone = 0.25;
}  // namespace tissue

// Closed ellipsoidal left-ventricle shell. Coordinates are in mm relative to
// the volume centre. The long axis points from base to apex.
struct MyocardiumShell {
  Vec3 centre{};
  Vec3 long_axis{0, 0, 1};
  double outer_radius = 0.0;       // short-axis semi-axis of the outer surface
  double outer_half_length = 0.0;  // long-axis semi-axis of the outer surface
  double inner_radius = 0.0;
  double inner_half_length = 0.0;

  // Position of p in the shell frame: (long-axis coordinate, radial
  // distance from the long axis).
  std::pair<double, double> axial_radial(const Vec3& p) const;
  bool contains(const Vec3& p) const;  // between the inner and outer surfaces
  bool inside_outer(const Vec3& p) const;
};

struct Phantom {
  Volume activity;
  MuMap mu;
  MyocardiumShell heart;
  double background = 1.0;      // soft-tissue activity
  double myocardium_ratio = 0;  // myocardium / background activity
  std::uint64_t seed = 0;
};

// Torso with lungs, spine and a myocardial shell, randomized per seed.
// Throws physics::ConfigError when the grid is too small to hold the organs.
Phantom generate_phantom(std::uint64_t seed, const ScannerGeometry& geom);

}  // namespace dudo::data
