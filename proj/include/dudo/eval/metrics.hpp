#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dudo/tensor/tensor.hpp"

namespace dudo::eval {

// A metric whose value is undefined for the given inputs (zero reference
// energy, constant data, too few samples).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// 100 * ||pred - ref||^2 / ||ref||^2
double nmse(std::span<const double> pred, std::span<const double> ref);
// 10 log10(max(ref)^2 / MSE); +inf for identical inputs.
double psnr(std::span<const double> pred, std::span<const double> ref);

struct SsimOptions {
  std::size_t window = 7;  // uniform cubic window; clipped to short axes
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean SSIM over every fully contained window position of two rank-3
// tensors, with L = max(ref) and unbiased (N - 1) local variances.
double ssim(const Tensor& pred, const Tensor& ref, const SsimOptions& opt = {});

// 100 * |pred_s - ref_s| / ref_s per entry.
std::vector<double> ape(std::span<const double> pred, std::span<const double> ref);

struct Correlation {
  double r = 0;          // Pearson correlation coefficient
  double r_squared = 0;  // coefficient of determination of the linear fit, r^2
};
Correlation correlation_stats(std::span<const double> a, std::span<const double> b);

struct TTest {
  double t = 0;
  double dof = 0;
  double p = 1;  // two-sided
};
// Paired two-sided t-test on a - b. Identical groups give p = 1; a constant
// nonzero difference gives t = +-inf and p = 0.
TTest paired_ttest(std::span<const double> a, std::span<const double> b);

struct MeanStd {
  double mean = 0;
  double std = 0;  // sample standard deviation (N - 1); 0 for a single value
};
MeanStd mean_std(std::span<const double> v);

}  // namespace dudo::eval
