#include "dudo/eval/polar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace dudo::eval {

namespace {

using physics::Vec3;

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

// Distance along unit direction (axial cos, radial sin) to an ellipsoid of
// the given half length and radius.
double ray_to_ellipsoid(double c, double s, double half_length, double radius) {
  const double a = c / half_length, b = s / radius;
  return 1.0 / std::sqrt(a * a + b * b);
}

}  // namespace

std::size_t polar_segment(double axial, double theta_deg) {
  if (axial >= 1.0) return 16;
  double t = std::fmod(theta_deg, 360.0);
  if (t < 0) t += 360.0;
  if (axial >= 2.0 / 3.0) return 12 + static_cast<std::size_t>(std::fmod(t + 45.0, 360.0) / 90.0);
  const std::size_t sector = static_cast<std::size_t>(std::fmod(t + 30.0, 360.0) / 60.0);
  return (axial >= 1.0 / 3.0 ? 6 : 0) + sector;
}

PolarMap polar_map_17(const Tensor& volume, const physics::ScannerGeometry& geom,
                      const data::MyocardiumShell& shell, const PolarOptions& opt) {
  physics::check_volume(geom, volume, "polar_map_17");
  if (shell.inner_radius <= 0 || shell.inner_half_length <= 0 ||
      shell.outer_radius <= shell.inner_radius || shell.outer_half_length <= shell.inner_half_length)
    throw PolarGeometryError("polar map: degenerate myocardial shell");
  if (opt.phi_step_deg <= 0 || opt.theta_step_deg <= 0 || opt.radial_step_voxels <= 0)
    throw PolarGeometryError("polar map: sampling steps must be positive");

  const Vec3 n = normalized(shell.long_axis);
  Vec3 e1{opt.anterior[0] - dot(opt.anterior, n) * n[0], opt.anterior[1] - dot(opt.anterior, n) * n[1],
          opt.anterior[2] - dot(opt.anterior, n) * n[2]};
  if (dot(e1, e1) < 1e-12)
    throw PolarGeometryError("polar map: anterior reference is parallel to the long axis");
  e1 = normalized(e1);
  const Vec3 e2 = cross(n, e1);

  const double mid_len = 0.5 * (shell.inner_half_length + shell.outer_half_length);
  const double mid_rad = 0.5 * (shell.inner_radius + shell.outer_radius);
  const auto& g = geom.grid;
  const auto vals = volume.values();
  auto sample = [&](const Vec3& p) {
    std::size_t idx[3];
    for (int a = 0; a < 3; ++a) {
      const double f = p[a] / geom.voxel_mm + 0.5 * static_cast<double>(g[a]);
      if (f < 0 || f >= static_cast<double>(g[a])) return -std::numeric_limits<double>::infinity();
      idx[a] = static_cast<std::size_t>(f);
    }
    return vals[(idx[0] * g[1] + idx[1]) * g[2] + idx[2]];
  };

  std::array<double, kSegments> sum{};
  PolarMap map;
  const double deg = std::numbers::pi / 180.0;
  const double step = opt.radial_step_voxels * geom.voxel_mm;
  const std::size_t n_phi = static_cast<std::size_t>(std::round(90.0 / opt.phi_step_deg));
  const std::size_t n_theta = static_cast<std::size_t>(std::round(360.0 / opt.theta_step_deg));
  for (std::size_t ip = 0; ip <= n_phi; ++ip) {
    const double phi = std::min(90.0, static_cast<double>(ip) * opt.phi_step_deg) * deg;
    const double c = std::cos(phi), s = std::sin(phi);
    const double axial = ray_to_ellipsoid(c, s, mid_len, mid_rad) * c / shell.inner_half_length;
    const double reach = opt.radial_margin * ray_to_ellipsoid(c, s, shell.outer_half_length,
                                                              shell.outer_radius);
    // The apex direction is a single ray whatever its azimuth.
    const std::size_t thetas = ip == 0 ? 1 : n_theta;
    for (std::size_t it = 0; it < thetas; ++it) {
      const double theta = static_cast<double>(it) * opt.theta_step_deg;
      const double ct = std::cos(theta * deg), st = std::sin(theta * deg);
      Vec3 d;
      for (int a = 0; a < 3; ++a) d[a] = c * n[a] + s * (ct * e1[a] + st * e2[a]);
      double peak = -std::numeric_limits<double>::infinity();
      for (double r = 0.0; r <= reach; r += step) {
        const Vec3 p{shell.centre[0] + r * d[0], shell.centre[1] + r * d[1],
                     shell.centre[2] + r * d[2]};
        peak = std::max(peak, sample(p));
      }
      if (!std::isfinite(peak)) continue;
      const std::size_t seg = polar_segment(axial, theta);
      sum[seg] += peak;
      ++map.rays[seg];
    }
  }
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < kSegments; ++k) {
    if (map.rays[k] == 0)
      throw PolarGeometryError("polar map: segment " + std::to_string(k + 1) + " has no samples");
    map.mean[k] = sum[k] / static_cast<double>(map.rays[k]);
    top = std::max(top, map.mean[k]);
  }
  if (top <= 0) throw PolarGeometryError("polar map: no positive activity in the myocardium");
  for (std::size_t k = 0; k < kSegments; ++k) map.normalized[k] = 100.0 * map.mean[k] / top;
  return map;
}

}  // namespace dudo::eval
