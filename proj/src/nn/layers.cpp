#include "dudo/nn/layers.hpp"

#include <cmath>

namespace dudo::nn {

Tensor Init::normal(Shape shape, std::size_t fan_in, Activation next) {
  const double gain2 = next == Activation::kRelu ? 2.0 : 1.0;
  std::normal_distribution<double> nd(0.0, std::sqrt(gain2 / static_cast<double>(fan_in)));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng_);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor Init::fan_in_uniform(Shape shape, std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> ud(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = ud(rng_);
  return Tensor(std::move(shape), std::move(v), true);
}

Conv::Conv(Init& init, std::size_t c_in, std::size_t c_out, std::size_t k, Activation next,
           bool with_bias)
    : weight(init.normal({c_out, c_in, k, k, k}, c_in * k * k * k, next)) {
  if (k % 2 == 0) throw ContractError("Conv: kernel size must be odd");
  if (with_bias) bias = init.fan_in_uniform({c_out}, c_in * k * k * k);
}

Tensor Conv::operator()(const Tensor& x) const {
  return ops::conv3d(x, weight, bias, 1, weight.dim(2) / 2);
}

void Conv::visit(const std::string& prefix, const Visitor& v) {
  if (!v.param) return;
  v.param(join(prefix, "weight"), weight);
  if (bias.defined()) v.param(join(prefix, "bias"), bias);
}

UpConv::UpConv(Init& init, std::size_t c_in, std::size_t c_out)
    : weight(init.normal({c_in, c_out, 3, 3, 3}, c_in * 27 / 8, Activation::kLinear)),
      bias(init.fan_in_uniform({c_out}, c_in * 27 / 8)) {}

Tensor UpConv::operator()(const Tensor& x) const { return ops::upconv3d(x, weight, bias); }

void UpConv::visit(const std::string& prefix, const Visitor& v) {
  if (!v.param) return;
  v.param(join(prefix, "weight"), weight);
  v.param(join(prefix, "bias"), bias);
}

Linear::Linear(Init& init, std::size_t f_in, std::size_t f_out)
    : weight(init.normal({f_out, f_in}, f_in, Activation::kLinear)), bias(init.fan_in_uniform({f_out}, f_in)) {}

Tensor Linear::operator()(const Tensor& x) const { return ops::fully_connected(x, weight, bias); }

void Linear::visit(const std::string& prefix, const Visitor& v) {
  if (!v.param) return;
  v.param(join(prefix, "weight"), weight);
  v.param(join(prefix, "bias"), bias);
}

BatchNorm::BatchNorm(Init& init, std::size_t channels)
    : gamma(init.constant({channels}, 1.0)), beta(init.zeros({channels})), state(channels) {}

Tensor BatchNorm::operator()(const Tensor& x, NormMode mode) {
  return ops::batch_norm3d(x, gamma, beta, state, mode);
}

void BatchNorm::visit(const std::string& prefix, const Visitor& v) {
  if (v.param) {
    v.param(join(prefix, "gamma"), gamma);
    v.param(join(prefix, "beta"), beta);
  }
  if (v.norm_state) v.norm_state(prefix, state);
}

}  // namespace dudo::nn
