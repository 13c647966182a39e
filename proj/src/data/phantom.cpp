#include "dudo/data/phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace dudo::data {

namespace {

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

bool in_ellipsoid(const Vec3& p, const Vec3& c, const Vec3& semi) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[a] - c[a]) / semi[a];
    acc += d * d;
  }
  return acc <= 1.0;
}

}  // namespace

std::pair<double, double> MyocardiumShell::axial_radial(const Vec3& p) const {
  const Vec3 d{p[0] - centre[0], p[1] - centre[1], p[2] - centre[2]};
  const double s = dot3(d, long_axis);
  const double r2 = std::max(0.0, dot3(d, d) - s * s);
  return {s, std::sqrt(r2)};
}

bool MyocardiumShell::inside_outer(const Vec3& p) const {
  const auto [s, r] = axial_radial(p);
  const double a = s / outer_half_length, b = r / outer_radius;
  return a * a + b * b <= 1.0;
}

bool MyocardiumShell::contains(const Vec3& p) const {
  if (!inside_outer(p)) return false;
  const auto [s, r] = axial_radial(p);
  const double a = s / inner_half_length, b = r / inner_radius;
  return a * a + b * b > 1.0;
}

Phantom generate_phantom(std::uint64_t seed, const ScannerGeometry& geom) {
  const auto& grid = geom.grid;
  if (grid[0] < 8 || grid[1] < 8 || grid[2] < 4)
    throw physics::ConfigError("phantom: grid must be at least 8x8x4 voxels to hold the organs");
  const double hx = 0.5 * static_cast<double>(grid[0]) * geom.voxel_mm;
  const double hy = 0.5 * static_cast<double>(grid[1]) * geom.voxel_mm;
  const double hz = 0.5 * static_cast<double>(grid[2]) * geom.voxel_mm;
  const double scale = std::min(hx, hy);

  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  Phantom ph;
  ph.seed = seed;
  ph.background = 1.0;

  // Width and depth vary independently so body habitus differs by a few
  // voxels across the cohort and the outline has to be read from the data.
  const double torso_width = uni(0.78, 1.0);
  const double torso_depth = uni(0.78, 1.0);
  const Vec3 torso_semi{0.9 * hx * torso_width, 0.72 * hy * torso_depth, 4.0 * hz};
  const double lung_scale = uni(0.8, 1.15);
  const Vec3 lung_semi{0.26 * hx * lung_scale * torso_width, 0.4 * hy * lung_scale * torso_depth,
                       0.9 * hz};
  const Vec3 lung_l{0.42 * hx * torso_width, 0.04 * hy, 0.0};
  const Vec3 lung_r{-0.42 * hx * torso_width, 0.04 * hy, 0.0};
  const Vec3 spine_c{0.0, -0.52 * hy * torso_depth, 0.0};
  const double spine_half = 0.11 * scale;

  MyocardiumShell& heart = ph.heart;
  heart.outer_radius = 0.36 * scale * uni(0.92, 1.08);
  heart.outer_half_length = heart.outer_radius * uni(1.25, 1.45);
  // Wall thickness stays above sqrt(3) voxels so radial profiles through the
  // wall always cross at least one voxel centre inside it.
  const double wall = std::max(0.235 * scale, 1.8 * geom.voxel_mm);
  heart.inner_radius = heart.outer_radius - wall;
  heart.inner_half_length = heart.outer_half_length - wall;
  if (heart.inner_radius < 0.5 * geom.voxel_mm)
    throw physics::ConfigError("phantom: grid too coarse for a myocardial wall");
  const double azimuth = uni(20.0, 50.0) * std::numbers::pi / 180.0;
  const double tilt = uni(0.0, 15.0) * std::numbers::pi / 180.0;
  heart.long_axis = {std::cos(azimuth) * std::cos(tilt), std::sin(azimuth) * std::cos(tilt),
                     -std::sin(tilt)};
  heart.centre = {uni(0.06, 0.14) * hx, uni(0.04, 0.12) * hy, uni(-0.08, 0.08) * hz};
  // Extent of the outer ellipsoid along each axis: sqrt(c^2 n_a^2 + a^2 (1 - n_a^2)).
  for (int a = 0; a < 3; ++a) {
    const double n = heart.long_axis[a];
    const double ext = std::sqrt(heart.outer_half_length * heart.outer_half_length * n * n +
                                 heart.outer_radius * heart.outer_radius * (1.0 - n * n));
    const double half = (a == 0 ? hx : a == 1 ? hy : hz);
    if (std::abs(heart.centre[a]) + ext > half)
      throw physics::ConfigError("phantom: grid too small to contain the heart");
  }
  ph.myocardium_ratio = uni(4.0, 8.0);

  ph.activity = Volume::zeros(geom);
  ph.mu = MuMap{Tensor::zeros({grid[0], grid[1], grid[2]}), geom.voxel_mm};
  auto act = ph.activity.data.data();
  auto mu = ph.mu.data.data();
  for (std::size_t ix = 0; ix < grid[0]; ++ix)
    for (std::size_t iy = 0; iy < grid[1]; ++iy)
      for (std::size_t iz = 0; iz < grid[2]; ++iz) {
        const std::size_t i = (ix * grid[1] + iy) * grid[2] + iz;
        const Vec3 p = geom.voxel_centre(ix, iy, iz);
        if (!in_ellipsoid(p, {0, 0, 0}, torso_semi)) continue;
        act[i] = ph.background;
        mu[i] = tissue::kSoft;
        if (in_ellipsoid(p, lung_l, lung_semi) || in_ellipsoid(p, lung_r, lung_semi)) {
          act[i] = 0.3 * ph.background;
          mu[i] = tissue::kLung;
        }
        if (std::abs(p[0] - spine_c[0]) <= spine_half && std::abs(p[1] - spine_c[1]) <= spine_half) {
          act[i] = ph.background;
          mu[i] = tissue::kBone;
        }
        if (heart.inside_outer(p)) {
          // Blood pool in the cavity carries background activity.
          act[i] = heart.contains(p) ? ph.myocardium_ratio * ph.background : ph.background;
          mu[i] = tissue::kSoft;
        }
      }
  return ph;
}

}  // namespace dudo::data
