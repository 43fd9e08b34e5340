#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dice/image.hpp"

namespace dice {

struct NoiseField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t octaves = 1;
  std::uint64_t seed = 0;
  std::vector<double> values;  // in [-1, 1]

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const NoiseField&) const = default;
};

// Multi-octave 2-D gradient (Perlin) noise with quintic fade. Octave o
// (0-based) has base_res * 2^o lattice cells along each axis and amplitude
// 0.5^o; the sum is divided by the total amplitude. Lattice gradients are
// drawn from the 8 compass directions via SplitMix64(seed), octave by octave,
// row-major over the (res+1)^2 lattice.
NoiseField perlin_field(std::size_t height, std::size_t width,
                        std::size_t base_res, std::size_t octaves,
                        std::uint64_t seed);

// 1 where the min-max normalized field exceeds threshold. Throws
// DataError("degenerate noise field") for a constant field.
BinaryMap binarize_mask(const NoiseField& field, double threshold = 0.5);

// P x P max-pool; the last row/column of patches may be partial.
BinaryMap max_pool_mask(const BinaryMap& mask, std::size_t patch_size);

struct PseudoSample {
  ImageTensor image;
  BinaryMap mask_pixel;
  BinaryMap mask_patch;
  double opacity = 1.0;
};

// out = (1 - M) * I + M * ((1 - opacity) * I + opacity * T). Unmasked pixels
// are copied bit-for-bit.
PseudoSample synthesize_pseudo(const ImageTensor& image, const BinaryMap& mask,
                               const ImageTensor& texture, double opacity,
                               std::size_t patch_size = 16);

enum class TextureKind { stripes, checker, perlin };

// Procedural colour texture in [0, 1]^3 (stand-in for a texture dataset).
ImageTensor procedural_texture(std::size_t height, std::size_t width,
                               TextureKind kind, std::uint64_t seed);
ImageTensor procedural_texture(std::size_t height, std::size_t width,
                               std::uint64_t seed);  // kind drawn from seed

struct SynthConfig {
  std::size_t base_res = 4;
  std::size_t octaves = 1;
  double threshold = 0.5;
  double opacity_min = 0.2;
  double opacity_max = 1.0;
  std::size_t patch_size = 16;
};

// Draws noise, mask, texture and opacity from one seed; when texture is null
// a procedural texture is used. The mask is never empty.
PseudoSample make_pseudo_sample(const ImageTensor& image, std::uint64_t seed,
                                const SynthConfig& config = {},
                                const ImageTensor* texture = nullptr);

}  // namespace dice
