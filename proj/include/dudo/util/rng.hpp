#pragma once

#include <cstdint>
#include <limits>

namespace dudo {

// SplitMix64: a tiny counter-style generator, used both to derive independent
// stream seeds from (seed, index) pairs and as a cheap URBG for the standard
// distributions when one short stream per element is needed.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Seed for the stream `index` under `seed`; distinct (seed, index) pairs give
// statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 a(seed);
  const std::uint64_t base = a();
  SplitMix64 b(base ^ (index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
  return b();
}

}  // namespace dudo
