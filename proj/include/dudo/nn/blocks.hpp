#pragma once

#include <vector>

#include "dudo/nn/layers.hpp"

namespace dudo::nn {

struct AttenRdbConfig {
  std::size_t n_dense_layers = 3;
  std::size_t growth = 8;     // channels added by each dense layer
  std::size_t reduction = 4;  // squeeze ratio of the channel attention
};

// Residual dense block with squeeze-excitation channel attention. Each dense
// 3^3 conv sees the block input plus every earlier dense output; a 1^3 conv
// fuses them back to the input width before attention and the residual add.
struct AttenRdb {
  std::vector<Conv> dense;
  Conv fusion;
  Linear squeeze, excite;

  AttenRdb() = default;
  AttenRdb(Init& init, std::size_t channels, const AttenRdbConfig& cfg);
  std::size_t channels() const { return fusion.out_channels(); }
  Tensor operator()(const Tensor& x) const;
  void visit(const std::string& prefix, const Visitor& v);
};

// Cross-domain fusion: both branches are pooled to channel descriptors, mixed
// by a shared fully connected layer, and each branch is rescaled by its own
// sigmoid gate before concatenation. Output has 2c channels.
struct Cdf {
  Linear mix;           // 2c -> 2c
  Linear gate1, gate2;  // 2c -> c each

  Cdf() = default;
  Cdf(Init& init, std::size_t channels);
  std::size_t channels() const { return gate1.weight.dim(0); }
  Tensor operator()(const Tensor& x1, const Tensor& x2) const;
  void visit(const std::string& prefix, const Visitor& v);
};

// Refines decoder features with a gate computed from the coarse prediction:
// features + value(features) * sigmoid(key(prediction)).
struct SelfAttention {
  Conv key;    // 1^3, prediction channels -> c
  Conv value;  // 1^3, c -> c

  SelfAttention() = default;
  SelfAttention(Init& init, std::size_t channels, std::size_t prediction_channels = 1);
  Tensor operator()(const Tensor& features, const Tensor& prediction) const;
  void visit(const std::string& prefix, const Visitor& v);
};

// Spatial boundary enhancement. Each branch is squeezed to one spatial map,
// the two maps are fused, and per-branch one-channel gates (conv, batch norm,
// sigmoid) rescale every channel of their branch. Output has 2c channels.
struct Sbe {
  Conv squeeze1, squeeze2;  // c -> 1
  Conv fuse;                // 2 -> 2
  Conv expand1, expand2;    // 2 -> 1
  BatchNorm norm1, norm2;

  Sbe() = default;
  Sbe(Init& init, std::size_t channels);
  std::size_t channels() const { return squeeze1.in_channels(); }
  // The fused two-channel spatial map, exposed for inspection.
  Tensor fused_map(const Tensor& u1, const Tensor& u2) const;
  Tensor operator()(const Tensor& u1, const Tensor& u2, NormMode mode);
  void visit(const std::string& prefix, const Visitor& v);
};

}  // namespace dudo::nn
