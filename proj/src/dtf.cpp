#include "dice/dtf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dice/error.hpp"

namespace dice {
namespace {

constexpr std::size_t kHeaderSize = 12;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kMaxRank = 16;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::uint64_t DtfTensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_dtf(const DtfTensor& tensor) {
  if (tensor.dims.size() > kMaxRank) throw DataError("shape mismatch");
  if (tensor.element_count() != tensor.values.size()) throw DataError("shape mismatch");
  std::vector<std::uint8_t> out{'D', 'T', 'F', '1', kDtypeF32,
                                static_cast<std::uint8_t>(tensor.dims.size()),
                                0, 0, 0, 0, 0, 0};
  out.reserve(kHeaderSize + 8 * tensor.dims.size() + 4 * tensor.values.size());
  for (auto d : tensor.dims) put_u64(out, d);
  for (float f : tensor.values) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

DtfTensor decode_dtf(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), "DTF1", 4) != 0 ||
      bytes[4] != kDtypeF32) {
    throw DataError("not a DTF file");
  }
  const std::size_t rank = bytes[5];
  for (std::size_t i = 6; i < kHeaderSize; ++i) {
    if (bytes[i] != 0) throw DataError("not a DTF file");
  }
  if (rank > kMaxRank || bytes.size() < kHeaderSize + 8 * rank) {
    throw DataError("not a DTF file");
  }
  DtfTensor t;
  t.dims.resize(rank);
  unsigned __int128 count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims[i] = get_u64(bytes.data() + kHeaderSize + 8 * i);
    count *= t.dims[i];
    if (count > (static_cast<unsigned __int128>(1) << 40)) throw DataError("shape mismatch");
  }
  const std::size_t payload = kHeaderSize + 8 * rank;
  if (bytes.size() != payload + 4 * static_cast<std::size_t>(count)) {
    throw DataError("shape mismatch");
  }
  t.values.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const std::uint8_t* p = bytes.data() + payload + 4 * i;
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               static_cast<std::uint32_t>(p[1]) << 8 |
                               static_cast<std::uint32_t>(p[2]) << 16 |
                               static_cast<std::uint32_t>(p[3]) << 24;
    t.values[i] = std::bit_cast<float>(bits);
  }
  return t;
}

void write_dtf(const DtfTensor& tensor, const std::filesystem::path& path) {
  const auto bytes = encode_dtf(tensor);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("cannot write " + path.string());
}

DtfTensor read_dtf(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return decode_dtf(bytes);
}

}  // namespace dice
