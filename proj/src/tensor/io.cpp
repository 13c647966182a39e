#include "dudo/tensor/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace dudo {

namespace {

constexpr std::array<char, 4> kMagic = {'D', 'D', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated DDT1 file: " + path.string());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_ddt(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os.write(kMagic.data(), 4);
  put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
  for (auto e : tensor.shape()) put_u32(os, static_cast<std::uint32_t>(e));
  for (double v : tensor.data()) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw IoError("write failed: " + path.string());
}

Tensor load_ddt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic)
    throw IoError("not a DDT1 tensor file: " + path.string());
  const std::uint32_t rank = get_u32(is, path);
  if (rank == 0 || rank > 8) throw IoError("implausible DDT1 rank in " + path.string());
  Shape shape(rank);
  for (auto& e : shape) {
    e = get_u32(is, path);
    if (e == 0) throw IoError("zero extent in " + path.string());
  }
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(is, path));
  if (is.peek() != std::char_traits<char>::eof())
    throw IoError("trailing bytes after DDT1 payload: " + path.string());
  return Tensor(std::move(shape), std::move(values));
}

void quantize_f32(Tensor& tensor) {
  for (auto& v : tensor.data()) v = round_f32(v);
}

}  // namespace dudo
