#include "dudo/train/losses.hpp"

#include "dudo/physics/geometry.hpp"

namespace dudo::train {

void LossWeights::validate() const {
  if (!(projection >= 0) || !(image >= 0))
    throw physics::ConfigError("loss weights must be non-negative");
}

Tensor projection_loss(const Tensor& pred_ldfv, const Tensor& pred_fdfv, const Tensor& ldfv,
                       const Tensor& fdfv) {
  return ops::add(ops::l1_loss(pred_ldfv, ldfv), ops::l1_loss(pred_fdfv, fdfv));
}

Tensor image_loss(const Tensor& pred_beta, const Tensor& pred_mu0, const Tensor& pred_mu,
                  const Tensor& beta, const Tensor& mu) {
  return ops::add(ops::add(ops::l1_loss(pred_beta, beta), ops::l1_loss(pred_mu0, mu)),
                  ops::l1_loss(pred_mu, mu));
}

LossTerms total_loss(const std::vector<nn::IterationOutput>& outputs, const Labels& labels,
                     const LossWeights& weights) {
  if (outputs.empty()) throw ContractError("total_loss: no iterations");
  LossTerms terms;
  for (const auto& o : outputs) {
    const Tensor lp = projection_loss(o.p_ldfv, o.p_fdfv, labels.p_ldfv, labels.p_fdfv);
    const Tensor li = image_loss(o.beta, o.mu0, o.mu, labels.beta, labels.mu);
    terms.projection.push_back(lp.item());
    terms.image.push_back(li.item());
    const Tensor term = ops::add(ops::scale(lp, weights.projection), ops::scale(li, weights.image));
    terms.total = terms.total.defined() ? ops::add(terms.total, term) : term;
  }
  return terms;
}

}  // namespace dudo::train
