#pragma once

#include <span>
#include <vector>

#include "dudo/data/dataset.hpp"
#include "dudo/train/losses.hpp"

namespace dudo::train {

// Fixed scalings that bring every network input and label to order one.
// Full-dose projections are divided by the mean expected count per bin,
// low-dose ones additionally by the dose rate, the limited-view emission
// image by its own mean, and attenuation and boundary maps are multiplied by
// kMuScale.
inline constexpr double kMuScale = 10.0;

struct Example {
  std::size_t index = 0;
  // Single items without batch or channel axes: [U, V, D] and [X, Y, Z].
  Tensor p_ldlv, p_ldfv, p_fdfv;
  Tensor s_ldlv, mu, beta;
  double full_dose_scale = 1.0;  // counts per normalized full-dose unit
  double low_dose_scale = 1.0;   // counts per normalized low-dose unit
  double emission_scale = 1.0;   // s_ldlv units per normalized unit
};

Example make_example(const data::Sample& s, std::size_t index, const physics::ScannerGeometry& geom,
                     double total_counts);
std::vector<Example> load_examples(const data::DatasetManifest& manifest, data::Split split);

struct Batch {
  Tensor p_ldlv;  // [B, 1, U, V, D]
  Tensor s_ldlv;  // [B, 1, X, Y, Z]
  Labels labels;
};

Batch make_batch(const std::vector<Example>& examples, std::span<const std::size_t> members);

// Item b of a [B, 1, ...] tensor as a [...] tensor without gradient history.
Tensor batch_item(const Tensor& t, std::size_t b);

}  // namespace dudo::train
