#include "dudo/train/adam.hpp"

#include <cmath>

namespace dudo::train {

Adam::Adam(std::vector<ParamGroup> groups, AdamConfig cfg) : groups_(std::move(groups)), cfg_(cfg) {
  for (const auto& g : groups_) {
    if (!(g.lr >= 0)) throw ContractError("Adam: learning rate of group '" + g.name + "' is negative");
    auto& m = m_.emplace_back();
    auto& v = v_.emplace_back();
    for (const auto& p : g.params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const double lr = groups_[g].lr;
    for (std::size_t j = 0; j < groups_[g].params.size(); ++j) {
      Tensor& p = groups_[g].params[j];
      if (!p.has_grad()) continue;
      auto grad = p.grad();
      auto& m = m_[g][j];
      auto& v = v_[g][j];
      auto w = p.data();
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * grad[k];
        v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * grad[k] * grad[k];
        w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.zero_grad();
}

double clip_grad_norm(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.has_grad())
      for (double g : p.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto p : params)
      if (p.has_grad())
        for (double& g : p.grad()) g *= s;
  }
  return norm;
}

}  // namespace dudo::train
