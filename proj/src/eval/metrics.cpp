#include "dudo/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/students_t.hpp>

namespace dudo::eval {

namespace {

void require_same_size(const char* metric, std::size_t a, std::size_t b) {
  if (a != b)
    throw DimensionError(metric, "size", std::to_string(a) + " vs " + std::to_string(b) + " values");
  if (a == 0) throw MetricError(std::string(metric) + ": empty input");
}

// Sums of `w` consecutive entries along one axis of a row-major [n0, n1, n2]
// array; the output axis shrinks to n - w + 1.
std::vector<double> window_sum(const std::vector<double>& in, std::array<std::size_t, 3>& ext,
                               int axis, std::size_t w) {
  std::array<std::size_t, 3> out_ext = ext;
  out_ext[axis] = ext[axis] - w + 1;
  std::array<std::size_t, 3> stride{ext[1] * ext[2], ext[2], 1};
  std::vector<double> out(out_ext[0] * out_ext[1] * out_ext[2]);
  std::size_t o = 0;
  for (std::size_t i = 0; i < out_ext[0]; ++i)
    for (std::size_t j = 0; j < out_ext[1]; ++j)
      for (std::size_t k = 0; k < out_ext[2]; ++k) {
        const std::size_t base = i * stride[0] + j * stride[1] + k;
        double s = 0.0;
        for (std::size_t t = 0; t < w; ++t) s += in[base + t * stride[axis]];
        out[o++] = s;
      }
  ext = out_ext;
  return out;
}

std::vector<double> box_sum(std::vector<double> v, std::array<std::size_t, 3> ext,
                            const std::array<std::size_t, 3>& w) {
  for (int a = 0; a < 3; ++a) v = window_sum(v, ext, a, w[a]);
  return v;
}

}  // namespace

double nmse(std::span<const double> pred, std::span<const double> ref) {
  require_same_size("nmse", pred.size(), ref.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = pred[i] - ref[i];
    num += d * d;
    den += ref[i] * ref[i];
  }
  if (den == 0.0) throw MetricError("nmse: reference is all zero");
  return 100.0 * num / den;
}

double psnr(std::span<const double> pred, std::span<const double> ref) {
  require_same_size("psnr", pred.size(), ref.size());
  double mse = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = pred[i] - ref[i];
    mse += d * d;
  }
  mse /= static_cast<double>(ref.size());
  const double peak = *std::max_element(ref.begin(), ref.end());
  if (peak <= 0.0) throw MetricError("psnr: reference maximum is not positive");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& pred, const Tensor& ref, const SsimOptions& opt) {
  if (pred.rank() != 3 || pred.shape() != ref.shape())
    throw DimensionError("ssim", "shape", shape_str(pred.shape()) + " vs " + shape_str(ref.shape()));
  if (opt.window == 0) throw MetricError("ssim: window must be positive");
  const std::array<std::size_t, 3> ext{ref.dim(0), ref.dim(1), ref.dim(2)};
  std::array<std::size_t, 3> w{};
  double n = 1.0;
  for (int a = 0; a < 3; ++a) {
    w[a] = std::min(opt.window, ext[a]);
    n *= static_cast<double>(w[a]);
  }
  if (n < 2) throw MetricError("ssim: window holds a single voxel");
  const auto x = pred.values();
  const auto y = ref.values();
  const double peak = *std::max_element(y.begin(), y.end());
  if (peak <= 0.0) throw MetricError("ssim: reference maximum is not positive");
  const double c1 = (opt.k1 * peak) * (opt.k1 * peak);
  const double c2 = (opt.k2 * peak) * (opt.k2 * peak);

  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto sx = box_sum(x, ext, w), sy = box_sum(y, ext, w);
  const auto sxx = box_sum(std::move(xx), ext, w), syy = box_sum(std::move(yy), ext, w),
             sxy = box_sum(std::move(xy), ext, w);
  const double unbias = n / (n - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < sx.size(); ++i) {
    const double mx = sx[i] / n, my = sy[i] / n;
    const double vx = unbias * (sxx[i] / n - mx * mx);
    const double vy = unbias * (syy[i] / n - my * my);
    const double cxy = unbias * (sxy[i] / n - mx * my);
    total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(sx.size());
}

std::vector<double> ape(std::span<const double> pred, std::span<const double> ref) {
  require_same_size("ape", pred.size(), ref.size());
  std::vector<double> out(ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] == 0.0) throw MetricError("ape: reference entry is zero");
    out[i] = 100.0 * std::abs(pred[i] - ref[i]) / std::abs(ref[i]);
  }
  return out;
}

Correlation correlation_stats(std::span<const double> a, std::span<const double> b) {
  require_same_size("correlation", a.size(), b.size());
  const auto ma = mean_std(a).mean, mb = mean_std(b).mean;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw MetricError("correlation: constant input");
  Correlation c;
  c.r = std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
  c.r_squared = c.r * c.r;
  return c;
}

TTest paired_ttest(std::span<const double> a, std::span<const double> b) {
  require_same_size("paired_ttest", a.size(), b.size());
  if (a.size() < 2) throw MetricError("paired_ttest: needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const auto [mean, sd] = mean_std(d);
  TTest r;
  r.dof = static_cast<double>(d.size() - 1);
  if (sd == 0.0) {
    r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
    r.p = mean == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(d.size())));
  const boost::math::students_t dist(r.dof);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

MeanStd mean_std(std::span<const double> v) {
  if (v.empty()) throw MetricError("mean_std: empty input");
  double s = 0.0;
  for (double x : v) s += x;
  MeanStd r;
  r.mean = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double q = 0.0;
    for (double x : v) q += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(q / static_cast<double>(v.size() - 1));
  }
  return r;
}

}  // namespace dudo::eval
