#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace dice {

// H x W x C image, row-major with interleaved channels. Values are in [0, 1]
// before channel normalization.
struct ImageTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return data[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return data[(y * width + x) * channels + c];
  }

  bool operator==(const ImageTensor&) const = default;
};

// Row-major binary map (values 0 or 1).
struct BinaryMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;

  BinaryMap() = default;
  BinaryMap(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const {
    return data[y * width + x];
  }
  std::size_t count() const;

  bool operator==(const BinaryMap&) const = default;
};

// Netpbm I/O. PPM (P6) yields 3 channels, PGM (P5) one channel; only
// maxval 255 is supported. Values are scaled to [0, 1].
ImageTensor read_netpbm(const std::filesystem::path& path);
void write_ppm(const ImageTensor& image, const std::filesystem::path& path);
void write_pgm(const ImageTensor& image, const std::filesystem::path& path);

// Raw 8-bit PGM payload (used for heatmaps and masks).
void write_pgm_bytes(std::size_t height, std::size_t width,
                     const std::vector<std::uint8_t>& bytes,
                     const std::filesystem::path& path);

// Masks are stored as PGM with values {0, 255}; anything >= 128 reads as 1.
BinaryMap read_mask(const std::filesystem::path& path);
void write_mask(const BinaryMap& mask, const std::filesystem::path& path);

}  // namespace dice
