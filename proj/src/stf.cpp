#include "objvid/stf.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "objvid/errors.hpp"

namespace objvid {

static_assert(std::endian::native == std::endian::little,
              "STF io assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'T', 'F', '1'};

}  // namespace

void stf_write(const std::string& path, const Tensor& t) {
  if (!t.defined()) throw ContractError("stf_write: undefined tensor");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("stf_write: cannot open " + path);
  out.write(kMagic, 4);
  const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
  for (std::size_t i = 0; i < t.rank(); ++i) {
    const std::uint64_t d = t.dim(i);
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  const auto& data = t.data();
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw FormatError("stf_write: short write to " + path);
}

Tensor stf_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("stf_read: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("stf_read: bad magic in " + path);
  }
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), sizeof(rank));
  if (!in) throw FormatError("stf_read: truncated header in " + path);
  if (rank > 8) throw FormatError("stf_read: implausible rank " + std::to_string(rank) +
                                  " in " + path);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint64_t d = 0;
    in.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (!in) throw FormatError("stf_read: truncated dims in " + path);
    shape[i] = static_cast<std::size_t>(d);
  }
  const std::size_t count = shape_size(shape);
  std::vector<double> data(count);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) {
    throw FormatError("stf_read: truncated payload in " + path);
  }
  in.peek();
  if (!in.eof()) throw FormatError("stf_read: trailing bytes in " + path);
  return Tensor::from_data(shape, std::move(data));
}

}  // namespace objvid
