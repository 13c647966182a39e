#pragma once

#include <filesystem>
#include <stdexcept>

#include "dudo/tensor/tensor.hpp"

namespace dudo {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// DDT1 layout: magic "DDT1", u32 rank, rank x u32 extents, then the payload as
// little-endian f32 in row-major order. Values are narrowed to f32 on write.
void save_ddt(const std::filesystem::path& path, const Tensor& tensor);
Tensor load_ddt(const std::filesystem::path& path);

// Rounds every entry to the nearest f32 so the tensor survives a DDT1 round
// trip bit-for-bit.
void quantize_f32(Tensor& tensor);

// Rounds to the nearest float. The volatile store keeps GCC's SLP vectorizer
// from folding paired double->float->double casts away at -O3.
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return f;
}

}  // namespace dudo
