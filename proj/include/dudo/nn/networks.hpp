#pragma once

#include <cstdint>
#include <vector>

#include "dudo/nn/blocks.hpp"
#include "dudo/physics/geometry.hpp"
#include "dudo/physics/system_matrix.hpp"

namespace dudo::nn {

struct NetConfig {
  std::size_t base_channels = 4;  // width of the finest level; level l has base * 2^l
  std::size_t levels = 3;
  AttenRdbConfig rdb{3, 4, 4};
  std::size_t tsp_refine_blocks = 4;
  std::size_t bda_refine_blocks = 3;

  void validate() const;
  // Widths sized so one projection network lands near a million parameters.
  static NetConfig full_scale();
};

struct Ablation {
  bool no_tsp_stage2 = false;  // projection output is the stage-1 head
  bool no_bda_stage2 = false;  // attenuation output is the coarse decoder head
  bool no_mlf = false;         // auxiliary input is concatenated at the input only
};

// Encoder whose levels optionally fuse an auxiliary input through CDF blocks
// (multi-level fusion). Without fusion, auxiliary channels are simply
// concatenated to the input.
struct Encoder {
  Conv input, aux_input;
  std::vector<Conv> down, aux_down, merge;
  std::vector<Cdf> fusion;
  std::vector<AttenRdb> rdb;
  std::size_t in_channels = 0, aux_channels = 0;
  bool mlf = false;

  Encoder() = default;
  Encoder(Init& init, std::size_t in_channels, std::size_t aux_channels, const NetConfig& cfg,
          bool mlf);
  // Per-level features, finest first. `aux` must be undefined iff the
  // encoder was built without auxiliary channels.
  std::vector<Tensor> operator()(const Tensor& x, const Tensor& aux) const;
  void visit(const std::string& prefix, const Visitor& v);
};

// Mirror of Encoder with transposed-conv upsampling and skip connections.
struct Decoder {
  std::vector<UpConv> up;
  std::vector<Conv> merge;
  std::vector<AttenRdb> rdb;

  Decoder() = default;
  Decoder(Init& init, const NetConfig& cfg);
  // Decoded features per level, finest first; the coarsest entry is the
  // encoder bottleneck itself.
  std::vector<Tensor> operator()(const std::vector<Tensor>& encoded) const;
  void visit(const std::string& prefix, const Visitor& v);
};

struct TspOutput {
  Tensor ldfv;  // stage-1 prediction (view restoration)
  Tensor fdfv;  // stage-2 prediction (denoised)
};

// Two-stage projection network. Inputs use the [B, C, U, V, D] layout of
// projection stacks; extents are padded internally so pooling divides them.
struct TspNet {
  Encoder encoder;
  Decoder decoder;
  Conv coarse_head;
  SelfAttention attention;
  Conv bridge;
  std::vector<AttenRdb> refine;
  Conv fine_head;
  std::size_t levels = 0;
  bool stage2 = true;

  TspNet() = default;
  TspNet(Init& init, std::size_t in_channels, bool with_anatomy, const NetConfig& cfg,
         const Ablation& ablation);
  std::size_t in_channels() const { return encoder.in_channels; }
  bool with_anatomy() const { return encoder.aux_channels > 0; }
  TspOutput operator()(const Tensor& projections, const Tensor& anatomy) const;
  void visit(const std::string& prefix, const Visitor& v);
};

struct BdaOutput {
  Tensor beta;  // boundary estimate, non-negative
  Tensor mu0;   // coarse attenuation map
  Tensor mu;    // refined attenuation map
};

// Boundary-aware image network: shared encoder, attenuation and boundary
// decoders, SBE fusion and a refinement chain. Inputs use [B, C, X, Y, Z].
struct BdaNet {
  Encoder encoder;
  Decoder mu_decoder, beta_decoder;
  Conv mu_head, beta_head;
  Sbe sbe;
  Conv bridge;
  std::vector<AttenRdb> refine;
  Conv fine_head;
  std::size_t levels = 0;
  bool stage2 = true;

  BdaNet() = default;
  BdaNet(Init& init, std::size_t in_channels, const NetConfig& cfg, const Ablation& ablation);
  std::size_t in_channels() const { return encoder.in_channels; }
  BdaOutput operator()(const Tensor& images, const Tensor& emission, NormMode mode);
  void visit(const std::string& prefix, const Visitor& v);
};

// Unscaled system-matrix projection of [B, 1, X, Y, Z] volumes onto
// [B, 1, U, V, D] stacks and back, differentiable through the tape.
class Projector {
 public:
  Projector(const physics::ScannerGeometry& geom, const physics::SystemMatrix& A);
  Tensor forward(const Tensor& volumes) const;
  Tensor back(const Tensor& projections) const;
  // Rescaling factors that bring projected and back-projected unit data back
  // to order one: inverse mean row sum and inverse mean sensitivity.
  double forward_gain() const { return forward_gain_; }
  double back_gain() const { return back_gain_; }

 private:
  const physics::ScannerGeometry* geom_;
  const physics::SystemMatrix* A_;
  double forward_gain_ = 1.0, back_gain_ = 1.0;
};

struct CascadeConfig {
  std::size_t iterations = 5;
  NetConfig net;
  Ablation ablation;
  bool detach_feedback = false;  // cut gradients through earlier iterations' outputs
  std::uint64_t seed = 1;
};

struct IterationOutput {
  Tensor p_ldfv, p_fdfv;
  Tensor beta, mu0, mu;
};

// N paired projection/image networks. Projection tensors are [B, 1, U, V, D]
// in count units divided by a per-sample reference; volumes are [B, 1, X, Y, Z].
class Cascade {
 public:
  Cascade(const CascadeConfig& cfg, const physics::ScannerGeometry& geom,
          const physics::SystemMatrix& A);

  std::vector<IterationOutput> forward(const Tensor& p_ldlv, const Tensor& s_ldlv,
                                       NormMode mode);
  // Parameters are named iter<i>.tsp.<layer>.<param> and iter<i>.bda.<...>,
  // with i counted from 1.
  void visit(const Visitor& v);
  std::size_t parameter_count();

  const CascadeConfig& config() const { return cfg_; }
  const physics::ScannerGeometry& geometry() const { return *geom_; }
  const Projector& projector() const { return projector_; }
  std::vector<TspNet>& tsp() { return tsp_; }
  std::vector<BdaNet>& bda() { return bda_; }

 private:
  CascadeConfig cfg_;
  const physics::ScannerGeometry* geom_;
  Projector projector_;
  std::vector<TspNet> tsp_;
  std::vector<BdaNet> bda_;
};

// Copy of `base` with the ablation flags applied; networks are rebuilt from
// the same seed.
CascadeConfig ablation_config(const CascadeConfig& base, const Ablation& flags);

}  // namespace dudo::nn
