#include "dudo/train/examples.hpp"

#include <algorithm>

namespace dudo::train {

namespace {

Tensor scaled(const Tensor& t, double s) {
  std::vector<double> v(t.values());
  for (double& x : v) x *= s;
  return Tensor(t.shape(), std::move(v));
}

Tensor stack(const std::vector<Example>& examples, std::span<const std::size_t> members,
             Tensor Example::*field) {
  const Tensor& first = examples.at(members[0]).*field;
  Shape shape{members.size(), 1};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<double> v;
  v.reserve(shape_numel(shape));
  for (std::size_t m : members) {
    const auto& src = (examples.at(m).*field).values();
    v.insert(v.end(), src.begin(), src.end());
  }
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

Example make_example(const data::Sample& s, std::size_t index, const physics::ScannerGeometry& geom,
                     double total_counts) {
  if (!(total_counts > 0) || !(s.dose_rate > 0))
    throw physics::ConfigError("training data: counts and dose rate must be positive");
  Example e;
  e.index = index;
  e.full_dose_scale = total_counts / static_cast<double>(geom.n_bins());
  e.low_dose_scale = e.full_dose_scale * s.dose_rate;
  double mean = 0.0;
  for (double x : s.s_ldlv.data.values()) mean += x;
  mean /= static_cast<double>(s.s_ldlv.data.numel());
  e.emission_scale = mean > 0 ? mean : 1.0;

  e.p_ldlv = scaled(s.p_ldlv.data, 1.0 / e.low_dose_scale);
  e.p_ldfv = scaled(s.p_ldfv.data, 1.0 / e.low_dose_scale);
  e.p_fdfv = scaled(s.p_fdfv.data, 1.0 / e.full_dose_scale);
  e.s_ldlv = scaled(s.s_ldlv.data, 1.0 / e.emission_scale);
  e.mu = scaled(s.mu.data, kMuScale);
  e.beta = scaled(s.beta.data, kMuScale);
  return e;
}

std::vector<Example> load_examples(const data::DatasetManifest& manifest, data::Split split) {
  std::vector<Example> out;
  for (std::size_t idx : manifest.indices(split))
    out.push_back(make_example(data::load_sample(manifest, idx), idx, manifest.geometry,
                               manifest.config.total_counts));
  return out;
}

Batch make_batch(const std::vector<Example>& examples, std::span<const std::size_t> members) {
  if (members.empty()) throw ContractError("make_batch: empty batch");
  Batch b;
  b.p_ldlv = stack(examples, members, &Example::p_ldlv);
  b.s_ldlv = stack(examples, members, &Example::s_ldlv);
  b.labels.p_ldfv = stack(examples, members, &Example::p_ldfv);
  b.labels.p_fdfv = stack(examples, members, &Example::p_fdfv);
  b.labels.mu = stack(examples, members, &Example::mu);
  b.labels.beta = stack(examples, members, &Example::beta);
  return b;
}

Tensor batch_item(const Tensor& t, std::size_t b) {
  if (t.rank() < 3 || t.dim(1) != 1 || b >= t.dim(0))
    throw DimensionError("batch_item", "batch", "cannot take item " + std::to_string(b) + " of " +
                                                    shape_str(t.shape()));
  const Shape item(t.shape().begin() + 2, t.shape().end());
  const std::size_t n = shape_numel(item);
  const auto& v = t.values();
  return Tensor(item, std::vector<double>(v.begin() + b * n, v.begin() + (b + 1) * n));
}

}  // namespace dudo::train
