#include "dudo/nn/networks.hpp"

#include <string>

#include "dudo/util/rng.hpp"

namespace dudo::nn {

namespace {

std::size_t width(const NetConfig& cfg, std::size_t level) { return cfg.base_channels << level; }

std::array<std::size_t, 3> padded_extents(const Tensor& x, std::size_t levels) {
  const std::size_t m = std::size_t{1} << (levels - 1);
  std::array<std::size_t, 3> e{};
  for (int a = 0; a < 3; ++a) e[a] = (x.dim(a + 2) + m - 1) / m * m;
  return e;
}

std::array<std::size_t, 3> extents_of(const Tensor& x) { return {x.dim(2), x.dim(3), x.dim(4)}; }

void require_input(const char* net, const Tensor& x, std::size_t channels) {
  if (x.rank() != 5)
    throw DimensionError(net, "rank", "expected [B,C,*,*,*], got " + shape_str(x.shape()));
  if (x.dim(1) != channels)
    throw DimensionError(net, "channel",
                         "got " + std::to_string(x.dim(1)) + " input channels, network built for " +
                             std::to_string(channels));
}

}  // namespace

void NetConfig::validate() const {
  if (base_channels == 0) throw physics::ConfigError("network: base_channels must be positive");
  if (levels == 0 || levels > 6) throw physics::ConfigError("network: levels must be in [1, 6]");
  if (rdb.n_dense_layers == 0 || rdb.growth == 0 || rdb.reduction == 0)
    throw physics::ConfigError("network: dense block layers, growth and reduction must be positive");
  if (tsp_refine_blocks == 0 || bda_refine_blocks == 0)
    throw physics::ConfigError("network: refinement chains need at least one block");
}

NetConfig NetConfig::full_scale() {
  NetConfig c;
  c.base_channels = 16;
  c.rdb = {3, 16, 4};
  return c;
}

Encoder::Encoder(Init& init, std::size_t in_ch, std::size_t aux_ch, const NetConfig& cfg,
                 bool use_mlf)
    : in_channels(in_ch), aux_channels(aux_ch), mlf(use_mlf && aux_ch > 0) {
  input = Conv(init, in_ch + (mlf ? 0 : aux_ch), width(cfg, 0), 3, Activation::kRelu);
  if (mlf) aux_input = Conv(init, aux_ch, width(cfg, 0), 3, Activation::kRelu);
  for (std::size_t l = 0; l < cfg.levels; ++l) {
    if (l > 0) {
      down.emplace_back(init, width(cfg, l - 1), width(cfg, l), 3, Activation::kRelu);
      if (mlf) aux_down.emplace_back(init, width(cfg, l - 1), width(cfg, l), 3, Activation::kRelu);
    }
    if (mlf) {
      fusion.emplace_back(init, width(cfg, l));
      merge.emplace_back(init, 2 * width(cfg, l), width(cfg, l), 1);
    }
    rdb.emplace_back(init, width(cfg, l), cfg.rdb);
  }
}

std::vector<Tensor> Encoder::operator()(const Tensor& x, const Tensor& aux) const {
  if (aux.defined() != (aux_channels > 0))
    throw ContractError(aux_channels > 0 ? "encoder: auxiliary input required"
                                         : "encoder: built without an auxiliary input");
  if (aux.defined()) require_input("encoder", aux, aux_channels);
  Tensor h = ops::relu(input(mlf || !aux.defined() ? x : ops::concat_channels({x, aux})));
  Tensor a = mlf ? ops::relu(aux_input(aux)) : Tensor();
  std::vector<Tensor> features;
  for (std::size_t l = 0; l < rdb.size(); ++l) {
    if (l > 0) {
      h = ops::relu(down[l - 1](ops::avg_pool3d(h)));
      if (mlf) a = ops::relu(aux_down[l - 1](ops::avg_pool3d(a)));
    }
    if (mlf) h = merge[l](fusion[l](h, a));
    h = rdb[l](h);
    features.push_back(h);
  }
  return features;
}

void Encoder::visit(const std::string& prefix, const Visitor& v) {
  input.visit(join(prefix, "input"), v);
  if (mlf) aux_input.visit(join(prefix, "aux_input"), v);
  for (std::size_t l = 0; l < rdb.size(); ++l) {
    const std::string lvl = std::to_string(l);
    if (l > 0) {
      down[l - 1].visit(join(prefix, "down" + lvl), v);
      if (mlf) aux_down[l - 1].visit(join(prefix, "aux_down" + lvl), v);
    }
    if (mlf) {
      fusion[l].visit(join(prefix, "cdf" + lvl), v);
      merge[l].visit(join(prefix, "merge" + lvl), v);
    }
    rdb[l].visit(join(prefix, "rdb" + lvl), v);
  }
}

Decoder::Decoder(Init& init, const NetConfig& cfg) {
  for (std::size_t l = 0; l + 1 < cfg.levels; ++l) {
    up.emplace_back(init, width(cfg, l + 1), width(cfg, l));
    merge.emplace_back(init, 2 * width(cfg, l), width(cfg, l), 1);
    rdb.emplace_back(init, width(cfg, l), cfg.rdb);
  }
}

std::vector<Tensor> Decoder::operator()(const std::vector<Tensor>& encoded) const {
  if (encoded.size() != up.size() + 1)
    throw ContractError("decoder: level count differs from the encoder");
  std::vector<Tensor> out(encoded.size());
  out.back() = encoded.back();
  for (std::size_t l = up.size(); l-- > 0;) {
    const Tensor y = up[l](out[l + 1]);
    out[l] = rdb[l](merge[l](ops::concat_channels({y, encoded[l]})));
  }
  return out;
}

void Decoder::visit(const std::string& prefix, const Visitor& v) {
  for (std::size_t l = 0; l < up.size(); ++l) {
    const std::string lvl = std::to_string(l);
    up[l].visit(join(prefix, "up" + lvl), v);
    merge[l].visit(join(prefix, "merge" + lvl), v);
    rdb[l].visit(join(prefix, "rdb" + lvl), v);
  }
}

TspNet::TspNet(Init& init, std::size_t in_ch, bool with_anat, const NetConfig& cfg,
               const Ablation& ablation)
    : levels(cfg.levels), stage2(!ablation.no_tsp_stage2) {
  cfg.validate();
  encoder = Encoder(init, in_ch, with_anat ? 1 : 0, cfg, !ablation.no_mlf);
  decoder = Decoder(init, cfg);
  coarse_head = Conv(init, width(cfg, 0), 1, 1);
  if (!stage2) return;
  attention = SelfAttention(init, width(cfg, 0), 1);
  std::size_t multi_scale = 0;
  for (std::size_t l = 0; l < cfg.levels; ++l) multi_scale += width(cfg, l);
  bridge = Conv(init, multi_scale, width(cfg, 0), 1);
  for (std::size_t k = 0; k < cfg.tsp_refine_blocks; ++k)
    refine.emplace_back(init, width(cfg, 0), cfg.rdb);
  fine_head = Conv(init, width(cfg, 0), 1, 1);
}

TspOutput TspNet::operator()(const Tensor& projections, const Tensor& anatomy) const {
  require_input("tsp_forward", projections, in_channels());
  if (anatomy.defined() != with_anatomy())
    throw ContractError(with_anatomy() ? "tsp_forward: this iteration needs the projected attenuation map"
                                       : "tsp_forward: the first iteration takes no anatomical input");
  const auto native = extents_of(projections);
  const auto padded = padded_extents(projections, levels);
  const Tensor x = ops::pad_spatial(projections, padded);
  const Tensor a = anatomy.defined() ? ops::pad_spatial(anatomy, padded) : Tensor();

  const auto decoded = decoder(encoder(x, a));
  const Tensor coarse = coarse_head(decoded[0]);
  TspOutput out;
  out.ldfv = ops::crop_spatial(coarse, native);
  if (!stage2) {
    out.fdfv = out.ldfv;
    return out;
  }
  std::vector<Tensor> scales{attention(decoded[0], coarse)};
  for (std::size_t l = 1; l < decoded.size(); ++l)
    scales.push_back(ops::upsample_nearest(decoded[l], std::size_t{1} << l));
  Tensor h = bridge(ops::concat_channels(scales));
  for (const auto& block : refine) h = block(h);
  out.fdfv = ops::crop_spatial(ops::add(coarse, fine_head(h)), native);
  return out;
}

void TspNet::visit(const std::string& prefix, const Visitor& v) {
  encoder.visit(join(prefix, "enc"), v);
  decoder.visit(join(prefix, "dec"), v);
  coarse_head.visit(join(prefix, "coarse_head"), v);
  if (!stage2) return;
  attention.visit(join(prefix, "attention"), v);
  bridge.visit(join(prefix, "bridge"), v);
  for (std::size_t k = 0; k < refine.size(); ++k)
    refine[k].visit(join(prefix, "refine" + std::to_string(k)), v);
  fine_head.visit(join(prefix, "fine_head"), v);
}

BdaNet::BdaNet(Init& init, std::size_t in_ch, const NetConfig& cfg, const Ablation& ablation)
    : levels(cfg.levels), stage2(!ablation.no_bda_stage2) {
  cfg.validate();
  encoder = Encoder(init, in_ch, 1, cfg, !ablation.no_mlf);
  mu_decoder = Decoder(init, cfg);
  beta_decoder = Decoder(init, cfg);
  mu_head = Conv(init, width(cfg, 0), 1, 1);
  beta_head = Conv(init, width(cfg, 0), 1, 1);
  if (!stage2) return;
  sbe = Sbe(init, width(cfg, 0));
  bridge = Conv(init, 2 * width(cfg, 0), width(cfg, 0), 1);
  for (std::size_t k = 0; k < cfg.bda_refine_blocks; ++k)
    refine.emplace_back(init, width(cfg, 0), cfg.rdb);
  fine_head = Conv(init, width(cfg, 0), 1, 1);
}

BdaOutput BdaNet::operator()(const Tensor& images, const Tensor& emission, NormMode mode) {
  require_input("bda_forward", images, in_channels());
  require_input("bda_forward", emission, 1);
  const auto native = extents_of(images);
  const auto padded = padded_extents(images, levels);
  const auto encoded =
      encoder(ops::pad_spatial(images, padded), ops::pad_spatial(emission, padded));
  const Tensor u_mu = mu_decoder(encoded)[0];
  const Tensor u_beta = beta_decoder(encoded)[0];
  const Tensor mu0 = mu_head(u_mu);
  BdaOutput out;
  out.beta = ops::crop_spatial(ops::softplus(beta_head(u_beta)), native);
  out.mu0 = ops::crop_spatial(mu0, native);
  if (!stage2) {
    out.mu = out.mu0;
    return out;
  }
  Tensor h = bridge(sbe(u_mu, u_beta, mode));
  for (const auto& block : refine) h = block(h);
  out.mu = ops::crop_spatial(ops::add(mu0, fine_head(h)), native);
  return out;
}

void BdaNet::visit(const std::string& prefix, const Visitor& v) {
  encoder.visit(join(prefix, "enc"), v);
  mu_decoder.visit(join(prefix, "mu_dec"), v);
  beta_decoder.visit(join(prefix, "beta_dec"), v);
  mu_head.visit(join(prefix, "mu_head"), v);
  beta_head.visit(join(prefix, "beta_head"), v);
  if (!stage2) return;
  sbe.visit(join(prefix, "sbe"), v);
  bridge.visit(join(prefix, "bridge"), v);
  for (std::size_t k = 0; k < refine.size(); ++k)
    refine[k].visit(join(prefix, "refine" + std::to_string(k)), v);
  fine_head.visit(join(prefix, "fine_head"), v);
}

Projector::Projector(const physics::ScannerGeometry& geom, const physics::SystemMatrix& A)
    : geom_(&geom), A_(&A) {
  if (A.rows() != geom.n_bins() || A.cols() != geom.n_voxels() || A.geometry_hash() != geom.hash())
    throw physics::ConfigError("cascade: system matrix does not belong to the geometry");
  std::vector<double> ones(A.cols(), 1.0), rows(A.rows());
  A.forward(ones, rows);
  double acc = 0.0;
  std::size_t n = 0;
  for (double r : rows)
    if (r > 0) acc += r, ++n;
  if (n == 0) throw physics::ConfigError("cascade: system matrix is empty");
  forward_gain_ = static_cast<double>(n) / acc;
  acc = 0.0;
  n = 0;
  for (double s : A.sensitivity())
    if (s > 0) acc += s, ++n;
  back_gain_ = static_cast<double>(n) / acc;
}

Tensor Projector::forward(const Tensor& volumes) const {
  const auto* A = A_;
  return ops::linear_map(
      volumes, [A](std::span<const double> in, std::span<double> out) { A->forward(in, out); },
      [A](std::span<const double> in, std::span<double> out) { A->adjoint(in, out); },
      {1, geom_->pixels_u, geom_->pixels_v, geom_->n_detectors});
}

Tensor Projector::back(const Tensor& projections) const {
  const auto* A = A_;
  return ops::linear_map(
      projections, [A](std::span<const double> in, std::span<double> out) { A->adjoint(in, out); },
      [A](std::span<const double> in, std::span<double> out) { A->forward(in, out); },
      {1, geom_->grid[0], geom_->grid[1], geom_->grid[2]});
}

Cascade::Cascade(const CascadeConfig& cfg, const physics::ScannerGeometry& geom,
                 const physics::SystemMatrix& A)
    : cfg_(cfg), geom_(&geom), projector_(geom, A) {
  if (cfg.iterations < 1) throw physics::ConfigError("cascade: iterations must be >= 1");
  cfg.net.validate();
  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    Init tsp_init(derive_seed(cfg.seed, 2 * i));
    tsp_.emplace_back(tsp_init, i + 1, i > 0, cfg.net, cfg.ablation);
    Init bda_init(derive_seed(cfg.seed, 2 * i + 1));
    bda_.emplace_back(bda_init, i + 1, cfg.net, cfg.ablation);
  }
}

std::vector<IterationOutput> Cascade::forward(const Tensor& p_ldlv, const Tensor& s_ldlv,
                                              NormMode mode) {
  const Shape proj_shape{p_ldlv.rank() ? p_ldlv.dim(0) : 0, 1, geom_->pixels_u, geom_->pixels_v,
                         geom_->n_detectors};
  if (p_ldlv.shape() != proj_shape)
    throw DimensionError("dudocf_forward", "projection",
                         "expected " + shape_str(proj_shape) + ", got " + shape_str(p_ldlv.shape()));
  const Shape vol_shape{p_ldlv.dim(0), 1, geom_->grid[0], geom_->grid[1], geom_->grid[2]};
  if (s_ldlv.shape() != vol_shape)
    throw DimensionError("dudocf_forward", "volume",
                         "expected " + shape_str(vol_shape) + ", got " + shape_str(s_ldlv.shape()));

  auto feedback = [&](const Tensor& t) { return cfg_.detach_feedback ? t.detach() : t; };
  std::vector<IterationOutput> outs;
  std::vector<Tensor> proj_inputs, img_inputs;
  for (std::size_t i = 0; i < cfg_.iterations; ++i) {
    proj_inputs.push_back(p_ldlv);
    const Tensor anatomy =
        i == 0 ? Tensor()
               : ops::scale(projector_.forward(feedback(outs.back().mu)), projector_.forward_gain());
    const auto t = tsp_[i](ops::concat_channels(proj_inputs), anatomy);
    // P_LDLV is re-appended next iteration, after this prediction.
    proj_inputs.back() = feedback(t.fdfv);

    const Tensor emission = ops::scale(projector_.back(t.fdfv), projector_.back_gain());
    img_inputs.push_back(s_ldlv);
    const auto b = bda_[i](ops::concat_channels(img_inputs), emission, mode);
    img_inputs.back() = feedback(b.mu);
    outs.push_back({t.ldfv, t.fdfv, b.beta, b.mu0, b.mu});
  }
  return outs;
}

void Cascade::visit(const Visitor& v) {
  for (std::size_t i = 0; i < tsp_.size(); ++i) {
    const std::string it = "iter" + std::to_string(i + 1);
    tsp_[i].visit(it + ".tsp", v);
    bda_[i].visit(it + ".bda", v);
  }
}

std::size_t Cascade::parameter_count() {
  std::size_t n = 0;
  visit(Visitor{[&](const std::string&, Tensor& t) { n += t.numel(); }, nullptr});
  return n;
}

CascadeConfig ablation_config(const CascadeConfig& base, const Ablation& flags) {
  CascadeConfig c = base;
  c.ablation = flags;
  return c;
}

}  // namespace dudo::nn
