#pragma once

// DTF tensor container.
//
//   offset  size        field
//   0       4           magic "DTF1"
//   4       1           dtype code (1 = f32)
//   5       1           rank
//   6       6           zero padding
//   12      8 * rank    dims, u64 little-endian
//   ...     4 * prod    row-major f32 payload, little-endian
//
// The file must end exactly at the end of the payload.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace dice {

struct DtfTensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> values;

  std::uint64_t element_count() const;
  bool operator==(const DtfTensor&) const = default;
};

std::vector<std::uint8_t> encode_dtf(const DtfTensor& tensor);

// Throws DataError("not a DTF file") for a bad/short header and
// DataError("shape mismatch") when the payload does not match the dims.
DtfTensor decode_dtf(const std::vector<std::uint8_t>& bytes);

void write_dtf(const DtfTensor& tensor, const std::filesystem::path& path);
DtfTensor read_dtf(const std::filesystem::path& path);

}  // namespace dice
