#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dudo::physics {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Vec3 = std::array<double, 3>;

// One pinhole camera: a planar pixel array behind an ideal point aperture.
struct Detector {
  Vec3 aperture{};
  Vec3 normal{};  // unit vector from the aperture toward the volume centre
  Vec3 u_axis{};
  Vec3 v_axis{};
  double focal_mm = 0.0;  // aperture to detector plane
  double pitch_mm = 0.0;  // pixel pitch on the detector plane
};

// Multi-pinhole cardiac scanner. Detectors sit on a cylindrical surface around
// the patient (z) axis in three columns; detector indices run top column
// first, then centre, then bottom.
struct ScannerGeometry {
  std::size_t n_detectors = 19;
  std::vector<std::size_t> column_layout{5, 9, 5};
  std::size_t pixels_u = 16;
  std::size_t pixels_v = 16;
  std::array<std::size_t, 3> grid{32, 32, 16};
  double voxel_mm = 4.0;
  // Aperture distance from the volume centre as a multiple of the volume's
  // half diagonal; must exceed 1 so apertures stay outside the volume.
  double aperture_distance_ratio = 1.25;
  double focal_mm = 40.0;
  // Radius of each detector's field of view at the volume centre, as a
  // multiple of the volume's half diagonal.
  double fov_ratio = 0.8;
  double arc_deg = 180.0;            // angular span of every column
  double column_elevation_deg = 30.0;  // tilt of the outer columns
  // Each pixel is sampled by subrays x subrays rays through the pinhole,
  // spread uniformly over the pixel face and averaged.
  std::size_t subrays = 1;

  static ScannerGeometry full_scale();  // 72x72x40 volume, 32x32 pixels
  static ScannerGeometry desk();        // 32x32x16 volume, 16x16 pixels
  static ScannerGeometry toy();         // 16x16x8 volume, 16x16 pixels

  std::size_t n_voxels() const { return grid[0] * grid[1] * grid[2]; }
  std::size_t n_bins() const { return pixels_u * pixels_v * n_detectors; }
  double half_diagonal_mm() const;

  // Throws ConfigError when the layout or placement is degenerate.
  void validate() const;
  std::vector<Detector> detectors() const;
  std::uint64_t hash() const;
  std::string describe() const;

  // Index range [first, first + count) of the centre column.
  std::pair<std::size_t, std::size_t> centre_column() const;

  // Flat index of bin (u, v, d) in a [U, V, D] projection stack.
  std::size_t bin_index(std::size_t u, std::size_t v, std::size_t d) const {
    return (u * pixels_v + v) * n_detectors + d;
  }
  Vec3 voxel_centre(std::size_t ix, std::size_t iy, std::size_t iz) const;
};

}  // namespace dudo::physics
