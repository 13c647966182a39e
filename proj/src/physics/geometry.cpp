#include "dudo/physics/geometry.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace dudo::physics {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  return {a[0] / n, a[1] / n, a[2] / n};
}

double deg(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

ScannerGeometry ScannerGeometry::full_scale() {
  ScannerGeometry g;
  g.pixels_u = g.pixels_v = 32;
  g.grid = {72, 72, 40};
  return g;
}

ScannerGeometry ScannerGeometry::desk() { return ScannerGeometry{}; }

ScannerGeometry ScannerGeometry::toy() {
  ScannerGeometry g;
  g.pixels_u = g.pixels_v = 16;
  g.grid = {16, 16, 8};
  return g;
}

double ScannerGeometry::half_diagonal_mm() const {
  double acc = 0.0;
  for (auto n : grid) {
    const double h = 0.5 * static_cast<double>(n) * voxel_mm;
    acc += h * h;
  }
  return std::sqrt(acc);
}

void ScannerGeometry::validate() const {
  if (column_layout.empty()) throw ConfigError("geometry: empty column layout");
  const auto total = std::accumulate(column_layout.begin(), column_layout.end(), std::size_t{0});
  if (total != n_detectors)
    throw ConfigError("geometry: column layout sums to " + std::to_string(total) + " but " +
                      std::to_string(n_detectors) + " detectors are declared");
  for (auto c : column_layout)
    if (c == 0) throw ConfigError("geometry: empty detector column");
  if (pixels_u == 0 || pixels_v == 0) throw ConfigError("geometry: detector has no pixels");
  if (subrays == 0) throw ConfigError("geometry: subrays must be at least 1");
  for (auto n : grid)
    if (n == 0) throw ConfigError("geometry: empty volume grid");
  if (!(voxel_mm > 0) || !(focal_mm > 0) || !(aperture_distance_ratio > 0) || !(arc_deg > 0) ||
      !(fov_ratio > 0))
    throw ConfigError("geometry: sizes and distances must be positive");
  for (const auto& det : detectors()) {
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const double h = 0.5 * static_cast<double>(grid[a]) * voxel_mm;
      inside = inside && std::abs(det.aperture[a]) < h;
    }
    if (inside) throw ConfigError("geometry: pinhole aperture lies inside the volume");
  }
}

std::vector<Detector> ScannerGeometry::detectors() const {
  std::vector<Detector> out;
  out.reserve(n_detectors);
  const double radius = aperture_distance_ratio * half_diagonal_mm();
  // Pitch chosen so every detector's field of view spans fov_ratio half
  // diagonals at the volume centre.
  const double pitch =
      2.0 * focal_mm * fov_ratio * half_diagonal_mm() / (radius * static_cast<double>(pixels_u));
  const std::size_t n_cols = column_layout.size();
  for (std::size_t col = 0; col < n_cols; ++col) {
    const std::size_t count = column_layout[col];
    double elevation = 0.0;
    if (n_cols > 1) {
      // Top column first: elevation runs from +tilt down to -tilt.
      const double frac = static_cast<double>(col) / static_cast<double>(n_cols - 1);
      elevation = deg(column_elevation_deg) * (1.0 - 2.0 * frac);
    }
    for (std::size_t k = 0; k < count; ++k) {
      const double frac = count > 1 ? static_cast<double>(k) / static_cast<double>(count - 1) : 0.5;
      const double azimuth = deg(-0.5 * arc_deg + frac * arc_deg);
      const Vec3 outward{std::cos(elevation) * std::cos(azimuth),
                         std::cos(elevation) * std::sin(azimuth), std::sin(elevation)};
      Detector det;
      det.aperture = {radius * outward[0], radius * outward[1], radius * outward[2]};
      det.normal = {-outward[0], -outward[1], -outward[2]};
      det.u_axis = normalized(Vec3{-std::sin(azimuth), std::cos(azimuth), 0.0});
      det.v_axis = normalized(cross(det.normal, det.u_axis));
      det.focal_mm = focal_mm;
      det.pitch_mm = pitch;
      out.push_back(det);
    }
  }
  return out;
}

std::uint64_t ScannerGeometry::hash() const {
  // FNV-1a over the canonical description.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : describe()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string ScannerGeometry::describe() const {
  std::ostringstream os;
  os.precision(17);
  os << "det=" << n_detectors << ";cols=";
  for (auto c : column_layout) os << c << ',';
  os << ";pix=" << pixels_u << 'x' << pixels_v << ";grid=" << grid[0] << 'x' << grid[1] << 'x'
     << grid[2] << ";voxel=" << voxel_mm << ";ratio=" << aperture_distance_ratio
     << ";focal=" << focal_mm << ";fov=" << fov_ratio << ";arc=" << arc_deg << ";elev=" << column_elevation_deg;
  if (subrays != 1) os << ";subrays=" << subrays;

  return os.str();
}

std::pair<std::size_t, std::size_t> ScannerGeometry::centre_column() const {
  if (column_layout.size() != 3 || column_layout[1] != 9)
    throw ConfigError("geometry: limited-view masking needs a 3-column layout with a 9-detector centre column");
  return {column_layout[0], column_layout[1]};
}

Vec3 ScannerGeometry::voxel_centre(std::size_t ix, std::size_t iy, std::size_t iz) const {
  const std::size_t idx[3] = {ix, iy, iz};
  Vec3 p{};
  for (int a = 0; a < 3; ++a)
    p[a] = (static_cast<double>(idx[a]) + 0.5 - 0.5 * static_cast<double>(grid[a])) * voxel_mm;
  return p;
}

}  // namespace dudo::physics
