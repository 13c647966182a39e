#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "dudo/physics/geometry.hpp"

namespace dudo::physics {

// Walks a ray origin + t*dir (t >= 0, dir unit length) through the voxel grid
// centred on the origin of coordinates, reporting each crossed voxel with its
// entry and exit parameters in traversal order.
void trace_ray(const Vec3& origin, const Vec3& dir, const std::array<std::size_t, 3>& grid,
               double voxel_mm,
               const std::function<void(std::size_t voxel, double t0, double t1)>& visit);

// Sparse voxel -> detector-bin weights. Rows are projection bins in [U, V, D]
// order. A row holds one or more rays back to back; within a ray, entries are
// stored in order of increasing distance from the pinhole, which the
// attenuation integral relies on.
class SystemMatrix {
 public:
  SystemMatrix() = default;

  static SystemMatrix build(const ScannerGeometry& geom);
  // Assembles a matrix from row-ordered triplets (used by tests and the cache).
  // ray_start flags entries that begin a new ray inside their row; when empty,
  // every row is a single ray.
  static SystemMatrix from_triplets(std::size_t rows, std::size_t cols, std::uint64_t geometry_hash,
                                    const std::vector<std::uint32_t>& row_of,
                                    const std::vector<std::uint32_t>& col_of,
                                    const std::vector<double>& weights,
                                    const std::vector<double>& lengths_mm,
                                    std::vector<std::uint8_t> ray_start = {});

  std::size_t rows() const { return row_ptr_.empty() ? 0 : row_ptr_.size() - 1; }
  std::size_t cols() const { return n_cols_; }
  std::size_t nnz() const { return cols_.size(); }
  std::uint64_t geometry_hash() const { return geometry_hash_; }

  std::span<const std::size_t> row_ptr() const { return row_ptr_; }
  std::span<const std::uint32_t> col_index() const { return cols_; }
  std::span<const double> weights() const { return weights_; }
  // Ray length through the voxel for each entry.
  std::span<const double> lengths_mm() const { return lengths_; }
  // 1 where an entry is the first segment of a ray (always set at row starts).
  std::span<const std::uint8_t> ray_start() const { return ray_start_; }

  // y = A x, optionally with per-entry multipliers folded into the weights.
  void forward(std::span<const double> x, std::span<double> y,
               std::span<const double> entry_scale = {}) const;
  // x = A^T y
  void adjoint(std::span<const double> y, std::span<double> x,
               std::span<const double> entry_scale = {}) const;
  // Column sums of (optionally scaled) A.
  std::vector<double> sensitivity(std::span<const double> entry_scale = {}) const;

  // Dense copy, for toy-scale oracles only.
  std::vector<double> dense() const;

  // Cache layout: u64 geometry hash, u64 entry count, then entry-count
  // (u32 row, u32 col, f32 weight) triplets, then entry-count f32 lengths,
  // then entry-count u8 ray-start flags.
  // All little-endian.
  void save(const std::filesystem::path& path) const;
  static SystemMatrix load(const std::filesystem::path& path, std::size_t rows, std::size_t cols);

 private:
  void build_transpose();

  std::size_t n_cols_ = 0;
  std::uint64_t geometry_hash_ = 0;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> weights_;
  std::vector<double> lengths_;
  std::vector<std::uint8_t> ray_start_;
  // Column-major view: entry indices grouped by voxel.
  std::vector<std::size_t> col_ptr_;
  std::vector<std::size_t> col_entries_;
  std::vector<std::uint32_t> col_rows_;
};

// Loads the matrix for `geom` from `cache_dir` when present and valid, else
// builds and stores it. An empty cache_dir disables caching.
SystemMatrix load_or_build(const ScannerGeometry& geom, const std::filesystem::path& cache_dir);

}  // namespace dudo::physics
