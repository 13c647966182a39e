#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "dudo/tensor/ops.hpp"

namespace dudo::nn {

using ops::NormMode;

// Walks the trainable tensors and batch-norm statistics of a module tree.
// Names are dotted paths such as "enc.rdb0.dense1.weight".
struct Visitor {
  std::function<void(const std::string& name, Tensor& param)> param;
  std::function<void(const std::string& name, ops::BatchNormState& state)> norm_state;
};

inline std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

// What consumes a layer's output; sets the variance of its initial weights.
enum class Activation { kLinear, kRelu };

// Seeded parameter initializer. Weights are zero-mean normal with variance
// gain^2 / fan_in (gain sqrt(2) ahead of a ReLU, 1 otherwise), so activations
// keep their scale through the depth of the cascade. Biases draw from
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), so no unit starts exactly on a ReLU kink
// when its inputs vanish.
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}
  Tensor normal(Shape shape, std::size_t fan_in, Activation next);
  Tensor fan_in_uniform(Shape shape, std::size_t fan_in);
  Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0, true); }
  Tensor constant(Shape shape, double v) { return Tensor(std::move(shape), v, true); }

 private:
  std::mt19937_64 rng_;
};

// k^3 convolution with "same" padding.
struct Conv {
  Tensor weight;  // [C_out, C_in, k, k, k]
  Tensor bias;    // [C_out], undefined for bias-free convs

  Conv() = default;
  Conv(Init& init, std::size_t c_in, std::size_t c_out, std::size_t k,
       Activation next = Activation::kLinear, bool with_bias = true);
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  Tensor operator()(const Tensor& x) const;
  void visit(const std::string& prefix, const Visitor& v);
};

// 3^3 transposed convolution with stride 2; doubles every spatial extent.
struct UpConv {
  Tensor weight;  // [C_in, C_out, 3, 3, 3]
  Tensor bias;    // [C_out]

  UpConv() = default;
  UpConv(Init& init, std::size_t c_in, std::size_t c_out);
  Tensor operator()(const Tensor& x) const;
  void visit(const std::string& prefix, const Visitor& v);
};

struct Linear {
  Tensor weight;  // [F_out, F_in]
  Tensor bias;    // [F_out]

  Linear() = default;
  Linear(Init& init, std::size_t f_in, std::size_t f_out);
  Tensor operator()(const Tensor& x) const;
  void visit(const std::string& prefix, const Visitor& v);
};

struct BatchNorm {
  Tensor gamma, beta;
  ops::BatchNormState state;

  BatchNorm() = default;
  BatchNorm(Init& init, std::size_t channels);
  // Statistics are only updated in train mode; the state is owned by this
  // module, so concurrent forward passes over one module are not allowed.
  Tensor operator()(const Tensor& x, NormMode mode);
  void visit(const std::string& prefix, const Visitor& v);
};

// Number of scalar parameters reachable from a module's visit().
template <typename Module>
std::size_t count_parameters(Module& m) {
  std::size_t n = 0;
  m.visit("", Visitor{[&](const std::string&, Tensor& t) { n += t.numel(); }, nullptr});
  return n;
}

}  // namespace dudo::nn
