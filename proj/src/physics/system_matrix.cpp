#include "dudo/physics/system_matrix.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dudo/tensor/io.hpp"
#include "dudo/util/parallel.hpp"

namespace dudo::physics {

namespace {

constexpr double kMinSegmentMm = 1e-9;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  put_u32(os, static_cast<std::uint32_t>(v));
  put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated system-matrix cache");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& is) {
  const std::uint64_t lo = get_u32(is);
  const std::uint64_t hi = get_u32(is);
  return lo | (hi << 32);
}

}  // namespace

void trace_ray(const Vec3& origin, const Vec3& dir, const std::array<std::size_t, 3>& grid,
               double voxel_mm,
               const std::function<void(std::size_t, double, double)>& visit) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double t_enter = 0.0, t_exit = inf;
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    hi[a] = 0.5 * static_cast<double>(grid[a]) * voxel_mm;
    lo[a] = -hi[a];
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] <= lo[a] || origin[a] >= hi[a]) return;
      continue;
    }
    double t0 = (lo[a] - origin[a]) / dir[a];
    double t1 = (hi[a] - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (!(t_enter < t_exit)) return;

  long idx[3], step[3];
  double t_next[3], t_delta[3];
  const double t_mid_entry = t_enter + std::min(1e-9, 0.5 * (t_exit - t_enter));
  for (int a = 0; a < 3; ++a) {
    const double p = origin[a] + dir[a] * t_mid_entry;
    long i = static_cast<long>(std::floor((p - lo[a]) / voxel_mm));
    i = std::clamp(i, 0L, static_cast<long>(grid[a]) - 1);
    idx[a] = i;
    if (std::abs(dir[a]) < 1e-15) {
      step[a] = 0;
      t_next[a] = inf;
      t_delta[a] = inf;
    } else {
      step[a] = dir[a] > 0 ? 1 : -1;
      const double boundary = lo[a] + static_cast<double>(i + (step[a] > 0 ? 1 : 0)) * voxel_mm;
      t_next[a] = (boundary - origin[a]) / dir[a];
      t_delta[a] = voxel_mm / std::abs(dir[a]);
    }
  }

  double t = t_enter;
  while (t < t_exit) {
    int axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    const double t1 = std::min(t_next[axis], t_exit);
    if (t1 - t > kMinSegmentMm) {
      const std::size_t voxel =
          (static_cast<std::size_t>(idx[0]) * grid[1] + static_cast<std::size_t>(idx[1])) * grid[2] +
          static_cast<std::size_t>(idx[2]);
      visit(voxel, t, t1);
    }
    t = std::max(t, t1);
    idx[axis] += step[axis];
    if (idx[axis] < 0 || idx[axis] >= static_cast<long>(grid[axis])) break;
    t_next[axis] += t_delta[axis];
  }
}

SystemMatrix SystemMatrix::build(const ScannerGeometry& geom) {
  geom.validate();
  const auto dets = geom.detectors();
  const std::size_t U = geom.pixels_u, V = geom.pixels_v, D = geom.n_detectors;
  const double ref = geom.aperture_distance_ratio * geom.half_diagonal_mm();

  struct Entry {
    std::uint32_t col;
    double weight;
    double length;
    bool first;
  };
  const std::size_t S = geom.subrays;
  const double ray_share = 1.0 / static_cast<double>(S * S);
  // Per-bin entry lists, filled per detector in parallel (disjoint rows).
  std::vector<std::vector<Entry>> per_row(U * V * D);
  parallel_for(D, [&](std::size_t d) {
    const Detector& det = dets[d];
    for (std::size_t u = 0; u < U; ++u)
      for (std::size_t v = 0; v < V; ++v) {
        auto& row = per_row[geom.bin_index(u, v, d)];
        for (std::size_t su = 0; su < S; ++su)
          for (std::size_t sv = 0; sv < S; ++sv) {
            const double fu = (static_cast<double>(su) + 0.5) / static_cast<double>(S);
            const double fv = (static_cast<double>(sv) + 0.5) / static_cast<double>(S);
            const double du = (static_cast<double>(u) + fu - 0.5 * static_cast<double>(U)) * det.pitch_mm;
            const double dv = (static_cast<double>(v) + fv - 0.5 * static_cast<double>(V)) * det.pitch_mm;
            Vec3 pixel;
            for (int a = 0; a < 3; ++a)
              pixel[a] = det.aperture[a] - det.normal[a] * det.focal_mm + du * det.u_axis[a] +
                         dv * det.v_axis[a];
            Vec3 dir;
            double norm = 0.0;
            for (int a = 0; a < 3; ++a) {
              dir[a] = det.aperture[a] - pixel[a];
              norm += dir[a] * dir[a];
            }
            norm = std::sqrt(norm);
            for (auto& c : dir) c /= norm;
            bool first = true;
            trace_ray(det.aperture, dir, geom.grid, geom.voxel_mm,
                      [&](std::size_t voxel, double t0, double t1) {
                        const double length = t1 - t0;
                        const double t_mid = 0.5 * (t0 + t1);
                        const double w =
                            ray_share * (length / geom.voxel_mm) * (ref / t_mid) * (ref / t_mid);
                        // Stored at f32 precision so cached and freshly built
                        // matrices are bit-identical.
                        row.push_back({static_cast<std::uint32_t>(voxel), round_f32(w),
                                       round_f32(length), first});
                        first = false;
                      });
          }
      }
  });

  std::vector<std::uint32_t> row_of, col_of;
  std::vector<double> weights, lengths;
  std::vector<std::uint8_t> ray_start;
  for (std::size_t r = 0; r < per_row.size(); ++r)
    for (const auto& e : per_row[r]) {
      row_of.push_back(static_cast<std::uint32_t>(r));
      col_of.push_back(e.col);
      weights.push_back(e.weight);
      lengths.push_back(e.length);
      ray_start.push_back(e.first ? 1 : 0);
    }
  return from_triplets(geom.n_bins(), geom.n_voxels(), geom.hash(), row_of, col_of, weights, lengths,
                       std::move(ray_start));
}

SystemMatrix SystemMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                         std::uint64_t geometry_hash,
                                         const std::vector<std::uint32_t>& row_of,
                                         const std::vector<std::uint32_t>& col_of,
                                         const std::vector<double>& weights,
                                         const std::vector<double>& lengths_mm,
                                         std::vector<std::uint8_t> ray_start) {
  const std::size_t n = row_of.size();
  if (ray_start.empty()) ray_start.assign(n, 0);
  if (col_of.size() != n || weights.size() != n || lengths_mm.size() != n || ray_start.size() != n)
    throw std::invalid_argument("system matrix: triplet arrays differ in length");
  SystemMatrix m;
  m.n_cols_ = cols;
  m.geometry_hash_ = geometry_hash;
  m.row_ptr_.assign(rows + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (row_of[i] >= rows || col_of[i] >= cols)
      throw std::invalid_argument("system matrix: triplet index out of range");
    if (i > 0 && row_of[i] < row_of[i - 1])
      throw std::invalid_argument("system matrix: triplets must be grouped by row");
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i]))
      throw std::invalid_argument("system matrix: weights must be finite and non-negative");
    ++m.row_ptr_[row_of[i] + 1];
  }
  for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
  m.cols_ = col_of;
  m.weights_ = weights;
  m.lengths_ = lengths_mm;
  m.ray_start_ = std::move(ray_start);
  for (std::size_t r = 0; r < rows; ++r)
    if (m.row_ptr_[r] < m.row_ptr_[r + 1]) m.ray_start_[m.row_ptr_[r]] = 1;
  m.build_transpose();
  return m;
}

void SystemMatrix::build_transpose() {
  col_ptr_.assign(n_cols_ + 1, 0);
  for (auto c : cols_) ++col_ptr_[c + 1];
  for (std::size_t c = 0; c < n_cols_; ++c) col_ptr_[c + 1] += col_ptr_[c];
  col_entries_.assign(cols_.size(), 0);
  col_rows_.assign(cols_.size(), 0);
  std::vector<std::size_t> fill(col_ptr_.begin(), col_ptr_.end() - 1);
  for (std::size_t r = 0; r + 1 < row_ptr_.size(); ++r)
    for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
      const std::size_t slot = fill[cols_[e]]++;
      col_entries_[slot] = e;
      col_rows_[slot] = static_cast<std::uint32_t>(r);
    }
}

void SystemMatrix::forward(std::span<const double> x, std::span<double> y,
                           std::span<const double> entry_scale) const {
  if (x.size() != n_cols_ || y.size() != rows())
    throw std::invalid_argument("SystemMatrix::forward: size mismatch");
  const bool scaled = !entry_scale.empty();
  for (std::size_t r = 0; r < rows(); ++r) {
    double acc = 0.0;
    for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
      acc += (scaled ? weights_[e] * entry_scale[e] : weights_[e]) * x[cols_[e]];
    y[r] = acc;
  }
}

void SystemMatrix::adjoint(std::span<const double> y, std::span<double> x,
                           std::span<const double> entry_scale) const {
  if (x.size() != n_cols_ || y.size() != rows())
    throw std::invalid_argument("SystemMatrix::adjoint: size mismatch");
  const bool scaled = !entry_scale.empty();
  for (std::size_t c = 0; c < n_cols_; ++c) {
    double acc = 0.0;
    for (std::size_t k = col_ptr_[c]; k < col_ptr_[c + 1]; ++k) {
      const std::size_t e = col_entries_[k];
      acc += (scaled ? weights_[e] * entry_scale[e] : weights_[e]) * y[col_rows_[k]];
    }
    x[c] = acc;
  }
}

std::vector<double> SystemMatrix::sensitivity(std::span<const double> entry_scale) const {
  std::vector<double> ones(rows(), 1.0), s(n_cols_, 0.0);
  adjoint(ones, s, entry_scale);
  return s;
}

std::vector<double> SystemMatrix::dense() const {
  std::vector<double> out(rows() * n_cols_, 0.0);
  for (std::size_t r = 0; r < rows(); ++r)
    for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e)
      out[r * n_cols_ + cols_[e]] += weights_[e];
  return out;
}

void SystemMatrix::save(const std::filesystem::path& path) const {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write system-matrix cache: " + tmp);
    put_u64(os, geometry_hash_);
    put_u64(os, nnz());
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t e = row_ptr_[r]; e < row_ptr_[r + 1]; ++e) {
        put_u32(os, static_cast<std::uint32_t>(r));
        put_u32(os, cols_[e]);
        put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(weights_[e])));
      }
    for (double l : lengths_) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(l)));
    os.write(reinterpret_cast<const char*>(ray_start_.data()), static_cast<std::streamsize>(ray_start_.size()));
    if (!os) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

SystemMatrix SystemMatrix::load(const std::filesystem::path& path, std::size_t rows,
                                std::size_t cols) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open system-matrix cache: " + path.string());
  const std::uint64_t hash = get_u64(is);
  const std::uint64_t n = get_u64(is);
  std::vector<std::uint32_t> row_of(n), col_of(n);
  std::vector<double> weights(n), lengths(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    row_of[i] = get_u32(is);
    col_of[i] = get_u32(is);
    weights[i] = std::bit_cast<float>(get_u32(is));
  }
  for (std::uint64_t i = 0; i < n; ++i) lengths[i] = std::bit_cast<float>(get_u32(is));
  std::vector<std::uint8_t> ray_start(n);
  if (!is.read(reinterpret_cast<char*>(ray_start.data()), static_cast<std::streamsize>(n)))
    throw IoError("truncated system-matrix cache");
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in system-matrix cache");
  try {
    return from_triplets(rows, cols, hash, row_of, col_of, weights, lengths, std::move(ray_start));
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("corrupt system-matrix cache: ") + e.what());
  }
}

SystemMatrix load_or_build(const ScannerGeometry& geom, const std::filesystem::path& cache_dir) {
  if (cache_dir.empty()) return SystemMatrix::build(geom);
  char name[64];
  std::snprintf(name, sizeof name, "sysmat_%016llx.bin",
                static_cast<unsigned long long>(geom.hash()));
  const auto path = cache_dir / name;
  if (std::filesystem::exists(path)) {
    try {
      auto m = SystemMatrix::load(path, geom.n_bins(), geom.n_voxels());
      if (m.geometry_hash() == geom.hash()) return m;
    } catch (const IoError&) {
      // Fall through and rebuild a stale or damaged cache entry.
    }
  }
  auto m = SystemMatrix::build(geom);
  std::filesystem::create_directories(cache_dir);
  m.save(path);
  return m;
}

}  // namespace dudo::physics
