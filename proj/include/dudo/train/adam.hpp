#pragma once

#include <string>
#include <vector>

#include "dudo/tensor/tensor.hpp"

namespace dudo::train {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ParamGroup {
  std::string name;
  double lr = 1e-3;
  std::vector<Tensor> params;
};

// Adam with bias correction and one learning rate per parameter group.
// Parameters without a gradient buffer are treated as having zero gradient.
class Adam {
 public:
  Adam(std::vector<ParamGroup> groups, AdamConfig cfg = {});

  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

  // Moment buffers of parameter j in group g.
  const std::vector<double>& first_moment(std::size_t g, std::size_t j) const { return m_[g][j]; }
  const std::vector<double>& second_moment(std::size_t g, std::size_t j) const { return v_[g][j]; }

 private:
  std::vector<ParamGroup> groups_;
  AdamConfig cfg_;
  std::vector<std::vector<std::vector<double>>> m_, v_;
  std::size_t t_ = 0;
};

// Rescales all gradients so their joint L2 norm is at most max_norm and
// returns the norm measured before clipping.
double clip_grad_norm(const std::vector<Tensor>& params, double max_norm);

}  // namespace dudo::train
