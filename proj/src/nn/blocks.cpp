#include "dudo/nn/blocks.hpp"

#include <algorithm>
#include <string>

namespace dudo::nn {

namespace {

void require_channels(const char* block, const Tensor& x, std::size_t expected) {
  if (x.rank() != 5)
    throw DimensionError(block, "rank", "expected [B,C,D,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) != expected)
    throw DimensionError(block, "channel",
                         "input has " + std::to_string(x.dim(1)) + " channels, block expects " +
                             std::to_string(expected));
}

void require_same_extents(const char* block, const Tensor& a, const Tensor& b) {
  static const char* kAxes[] = {"batch", "channel", "depth", "height", "width"};
  for (std::size_t ax : {0u, 2u, 3u, 4u})
    if (a.dim(ax) != b.dim(ax))
      throw DimensionError(block, kAxes[ax], shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

AttenRdb::AttenRdb(Init& init, std::size_t channels, const AttenRdbConfig& cfg) {
  if (channels == 0 || cfg.n_dense_layers == 0 || cfg.growth == 0 || cfg.reduction == 0)
    throw ContractError("AttenRdb: channels, layers, growth and reduction must be positive");
  for (std::size_t i = 0; i < cfg.n_dense_layers; ++i)
    dense.emplace_back(init, channels + i * cfg.growth, cfg.growth, 3, Activation::kRelu);
  fusion = Conv(init, channels + cfg.n_dense_layers * cfg.growth, channels, 1);
  const std::size_t hidden = std::max<std::size_t>(1, channels / cfg.reduction);
  squeeze = Linear(init, channels, hidden);
  excite = Linear(init, hidden, channels);
}

Tensor AttenRdb::operator()(const Tensor& x) const {
  require_channels("atten_rdb", x, channels());
  std::vector<Tensor> features{x};
  for (const auto& conv : dense) {
    const Tensor in = features.size() == 1 ? x : ops::concat_channels(features);
    features.push_back(ops::relu(conv(in)));
  }
  const Tensor fused = fusion(ops::concat_channels(features));
  // Softplus keeps the squeeze layer free of dead units at small widths.
  const Tensor w = ops::sigmoid(excite(ops::softplus(squeeze(ops::global_avg_pool(fused)))));
  return ops::add(x, ops::channel_scale(fused, w));
}

void AttenRdb::visit(const std::string& prefix, const Visitor& v) {
  for (std::size_t i = 0; i < dense.size(); ++i)
    dense[i].visit(join(prefix, "dense" + std::to_string(i)), v);
  fusion.visit(join(prefix, "fusion"), v);
  squeeze.visit(join(prefix, "squeeze"), v);
  excite.visit(join(prefix, "excite"), v);
}

Cdf::Cdf(Init& init, std::size_t channels)
    : mix(init, 2 * channels, 2 * channels),
      gate1(init, 2 * channels, channels),
      gate2(init, 2 * channels, channels) {}

Tensor Cdf::operator()(const Tensor& x1, const Tensor& x2) const {
  require_channels("cdf_fuse", x1, channels());
  require_channels("cdf_fuse", x2, channels());
  require_same_extents("cdf_fuse", x1, x2);
  const Tensor wf =
      mix(ops::concat_channels({ops::global_avg_pool(x1), ops::global_avg_pool(x2)}));
  return ops::concat_channels({ops::channel_scale(x1, ops::sigmoid(gate1(wf))),
                               ops::channel_scale(x2, ops::sigmoid(gate2(wf)))});
}

void Cdf::visit(const std::string& prefix, const Visitor& v) {
  mix.visit(join(prefix, "mix"), v);
  gate1.visit(join(prefix, "gate1"), v);
  gate2.visit(join(prefix, "gate2"), v);
}

SelfAttention::SelfAttention(Init& init, std::size_t channels, std::size_t prediction_channels)
    : key(init, prediction_channels, channels, 1), value(init, channels, channels, 1) {}

Tensor SelfAttention::operator()(const Tensor& features, const Tensor& prediction) const {
  require_channels("self_attention", features, value.in_channels());
  require_channels("self_attention", prediction, key.in_channels());
  require_same_extents("self_attention", features, prediction);
  return ops::add(features, ops::mul(value(features), ops::sigmoid(key(prediction))));
}

void SelfAttention::visit(const std::string& prefix, const Visitor& v) {
  key.visit(join(prefix, "key"), v);
  value.visit(join(prefix, "value"), v);
}

Sbe::Sbe(Init& init, std::size_t channels)
    : squeeze1(init, channels, 1, 3),
      squeeze2(init, channels, 1, 3),
      fuse(init, 2, 2, 3),
      // Batch norm absorbs any bias, so the gate convs carry none.
      expand1(init, 2, 1, 3, Activation::kLinear, false),
      expand2(init, 2, 1, 3, Activation::kLinear, false),
      norm1(init, 1),
      norm2(init, 1) {}

Tensor Sbe::fused_map(const Tensor& u1, const Tensor& u2) const {
  require_channels("sbe_fuse", u1, channels());
  require_channels("sbe_fuse", u2, channels());
  require_same_extents("sbe_fuse", u1, u2);
  return fuse(ops::concat_channels({squeeze1(u1), squeeze2(u2)}));
}

Tensor Sbe::operator()(const Tensor& u1, const Tensor& u2, NormMode mode) {
  const Tensor sf = fused_map(u1, u2);
  const Tensor g1 = ops::sigmoid(norm1(expand1(sf), mode));
  const Tensor g2 = ops::sigmoid(norm2(expand2(sf), mode));
  return ops::concat_channels({ops::spatial_gate(u1, g1), ops::spatial_gate(u2, g2)});
}

void Sbe::visit(const std::string& prefix, const Visitor& v) {
  squeeze1.visit(join(prefix, "squeeze1"), v);
  squeeze2.visit(join(prefix, "squeeze2"), v);
  fuse.visit(join(prefix, "fuse"), v);
  expand1.visit(join(prefix, "expand1"), v);
  expand2.visit(join(prefix, "expand2"), v);
  norm1.visit(join(prefix, "norm1"), v);
  norm2.visit(join(prefix, "norm2"), v);
}

}  // namespace dudo::nn
