#pragma once

#include <array>
#include <functional>
#include <vector>

#include "dudo/tensor/tensor.hpp"

// Differentiable primitives. Volumetric tensors use the [B, C, D, H, W]
// layout throughout.
namespace dudo::ops {

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// log(1 + exp(x)), evaluated stably.
Tensor softplus(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// out[b,c,...] = x[b,c,...] * w[b,c]
Tensor channel_scale(const Tensor& x, const Tensor& w);
// out[b,c,...] = x[b,c,...] * g[b,0,...]
Tensor spatial_gate(const Tensor& x, const Tensor& g);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count);

// kernel [C_out, C_in, k, k, k]; bias [C_out] or undefined.
Tensor conv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

// Exact adjoint of conv3d(., kernel, stride, padding) mapping back onto a
// grid of `out_extents`. kernel keeps the conv3d layout, so input channels
// here are kernel.dim(0) and output channels kernel.dim(1); bias has
// kernel.dim(1) entries.
Tensor conv3d_transpose(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                        std::size_t stride, std::size_t padding,
                        std::array<std::size_t, 3> out_extents);

// Transposed conv with kernel 3, padding 1: doubles every spatial extent.
Tensor upconv3d(const Tensor& x, const Tensor& kernel, const Tensor& bias);

Tensor avg_pool3d(const Tensor& x, std::size_t window = 2);
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

// Zero-extends the high end of each spatial axis up to `extents`.
Tensor pad_spatial(const Tensor& x, std::array<std::size_t, 3> extents);
// Keeps the low corner of each spatial axis, adjoint of pad_spatial.
Tensor crop_spatial(const Tensor& x, std::array<std::size_t, 3> extents);

// x [B, F_in], weight [F_out, F_in], bias [F_out]
Tensor fully_connected(const Tensor& x, const Tensor& weight, const Tensor& bias);

enum class NormMode { kTrain, kEval };

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  bool initialized = false;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Train mode normalizes with biased batch statistics and updates the running
// estimates (unbiased variance). Eval mode requires initialized statistics.
Tensor batch_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, NormMode mode);

// mean |pred - target|; the subgradient at ties is 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

// Applies a fixed linear operator to every batch item of x. `apply` maps one
// item (numel(x)/B values) onto one output item of shape `item_shape`;
// `adjoint` maps the other way and must be its exact transpose.
using LinearFn = std::function<void(std::span<const double>, std::span<double>)>;
Tensor linear_map(const Tensor& x, const LinearFn& apply, const LinearFn& adjoint,
                  const Shape& item_shape);

}  // namespace dudo::ops
