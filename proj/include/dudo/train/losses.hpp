#pragma once

#include <vector>

#include "dudo/nn/networks.hpp"

namespace dudo::train {

struct LossWeights {
  double projection = 1.0;  // weight of every per-iteration projection term
  double image = 0.2;       // weight of every per-iteration image term

  void validate() const;
};

// Supervision for one batch, in the same normalized units as the network
// outputs: projections [B, 1, U, V, D], volumes [B, 1, X, Y, Z].
struct Labels {
  Tensor p_ldfv, p_fdfv;
  Tensor beta, mu;
};

// L1(stage-1, low-dose full-view label) + L1(stage-2, full-dose full-view label).
Tensor projection_loss(const Tensor& pred_ldfv, const Tensor& pred_fdfv, const Tensor& ldfv,
                       const Tensor& fdfv);
// L1(boundary) + L1(coarse attenuation) + L1(refined attenuation).
Tensor image_loss(const Tensor& pred_beta, const Tensor& pred_mu0, const Tensor& pred_mu,
                  const Tensor& beta, const Tensor& mu);

struct LossTerms {
  Tensor total;
  std::vector<double> projection;  // per iteration
  std::vector<double> image;
};

// Sum over iterations of weights.projection * projection_loss + weights.image
// * image_loss, every iteration supervised by the same labels.
LossTerms total_loss(const std::vector<nn::IterationOutput>& outputs, const Labels& labels,
                     const LossWeights& weights);

}  // namespace dudo::train
