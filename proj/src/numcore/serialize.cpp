#include "adyolo/numcore/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace adyolo {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");
static_assert(sizeof(Real) == 8);

namespace {
constexpr char kMagic[4] = {'A', 'D', 'T', 'N'};
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated stream reading u32");
  return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (int extent : t.shape()) write_u32(out, static_cast<std::uint32_t>(extent));
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
  const std::uint32_t rank = read_u32(in);
  if (rank > kMaxRank) throw FormatError("tensor rank " + std::to_string(rank) + " exceeds limit");
  Shape shape(rank);
  for (auto& extent : shape) extent = static_cast<int>(read_u32(in));
  Tensor t(shape);
  if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(Real)))) {
    throw FormatError("truncated tensor payload for shape " + shape_string(shape));
  }
  return t;
}

void save_tensor_file(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tensor(in);
}

}  // namespace adyolo
