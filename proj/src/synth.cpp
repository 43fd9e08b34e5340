#include "dice/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "dice/error.hpp"
#include "dice/rng.hpp"

namespace dice {
namespace {

struct Gradient {
  double x, y;
};

std::array<Gradient, 8> compass() {
  const double s = 1.0 / std::sqrt(2.0);
  return {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {s, s}, {s, -s}, {-s, s}, {-s, -s}}};
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lerp(double a, double b, double t) { return a + t * (b - a); }

void add_octave(std::vector<double>& out, std::size_t height, std::size_t width,
                std::size_t res, double amplitude, SplitMix64& rng) {
  static const auto dirs = compass();
  const std::size_t n = res + 1;
  std::vector<Gradient> grads(n * n);
  for (auto& g : grads) g = dirs[rng.below(dirs.size())];

  for (std::size_t y = 0; y < height; ++y) {
    const double v = static_cast<double>(y * res) / static_cast<double>(height);
    const std::size_t cy = std::min(static_cast<std::size_t>(v), res - 1);
    const double fy = v - static_cast<double>(cy);
    for (std::size_t x = 0; x < width; ++x) {
      const double u = static_cast<double>(x * res) / static_cast<double>(width);
      const std::size_t cx = std::min(static_cast<std::size_t>(u), res - 1);
      const double fx = u - static_cast<double>(cx);
      const Gradient& g00 = grads[cy * n + cx];
      const Gradient& g10 = grads[cy * n + cx + 1];
      const Gradient& g01 = grads[(cy + 1) * n + cx];
      const Gradient& g11 = grads[(cy + 1) * n + cx + 1];
      const double n00 = g00.x * fx + g00.y * fy;
      const double n10 = g10.x * (fx - 1.0) + g10.y * fy;
      const double n01 = g01.x * fx + g01.y * (fy - 1.0);
      const double n11 = g11.x * (fx - 1.0) + g11.y * (fy - 1.0);
      const double sx = fade(fx);
      const double top = lerp(n00, n10, sx);
      const double bot = lerp(n01, n11, sx);
      out[y * width + x] += amplitude * lerp(top, bot, fade(fy));
    }
  }
}

}  // namespace

NoiseField perlin_field(std::size_t height, std::size_t width,
                        std::size_t base_res, std::size_t octaves,
                        std::uint64_t seed) {
  if (base_res == 0 || octaves == 0 || height < base_res || width < base_res) {
    throw DataError("invalid noise field dims");
  }
  NoiseField f{height, width, octaves, seed, std::vector<double>(height * width, 0.0)};
  SplitMix64 rng(seed);
  double total = 0.0;
  double amplitude = 1.0;
  std::size_t res = base_res;
  for (std::size_t o = 0; o < octaves; ++o) {
    add_octave(f.values, height, width, res, amplitude, rng);
    total += amplitude;
    amplitude *= 0.5;
    res *= 2;
  }
  for (double& v : f.values) v = std::clamp(v / total, -1.0, 1.0);
  return f;
}

BinaryMap binarize_mask(const NoiseField& field, double threshold) {
  const auto [lo_it, hi_it] = std::minmax_element(field.values.begin(), field.values.end());
  if (lo_it == field.values.end() || *hi_it <= *lo_it) {
    throw DataError("degenerate noise field");
  }
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  BinaryMap mask(field.height, field.width);
  for (std::size_t i = 0; i < field.values.size(); ++i) {
    mask.data[i] = (field.values[i] - lo) / range > threshold ? 1 : 0;
  }
  return mask;
}

BinaryMap max_pool_mask(const BinaryMap& mask, std::size_t patch_size) {
  if (patch_size == 0) throw DataError("invalid patch size");
  const std::size_t ph = (mask.height + patch_size - 1) / patch_size;
  const std::size_t pw = (mask.width + patch_size - 1) / patch_size;
  BinaryMap pooled(ph, pw);
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (mask.at(y, x)) pooled.at(y / patch_size, x / patch_size) = 1;
    }
  }
  return pooled;
}

PseudoSample synthesize_pseudo(const ImageTensor& image, const BinaryMap& mask,
                               const ImageTensor& texture, double opacity,
                               std::size_t patch_size) {
  if (texture.height != image.height || texture.width != image.width ||
      texture.channels != image.channels || mask.height != image.height ||
      mask.width != image.width) {
    throw DataError("shape mismatch");
  }
  if (!(opacity > 0.0 && opacity <= 1.0)) throw DataError("opacity must be in (0, 1]");
  PseudoSample out{image, mask, max_pool_mask(mask, patch_size), opacity};
  const float a = static_cast<float>(opacity);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (!mask.at(y, x)) continue;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.image.at(y, x, c) = (1.0f - a) * image.at(y, x, c) + a * texture.at(y, x, c);
      }
    }
  }
  return out;
}

ImageTensor procedural_texture(std::size_t height, std::size_t width,
                               TextureKind kind, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::array<float, 3> c0{}, c1{};
  for (auto& c : c0) c = static_cast<float>(rng.uniform());
  for (auto& c : c1) c = static_cast<float>(rng.uniform());
  ImageTensor tex(height, width, 3);

  switch (kind) {
    case TextureKind::stripes: {
      const auto a = static_cast<long>(rng.below(5)) - 2;
      const auto b = static_cast<long>(rng.below(3)) + 1;
      const long period = 2 + static_cast<long>(rng.below(9));
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const long phase = a * static_cast<long>(x) + b * static_cast<long>(y);
          const bool on = ((phase % (2 * period)) + 2 * period) % (2 * period) < period;
          for (std::size_t c = 0; c < 3; ++c) tex.at(y, x, c) = on ? c0[c] : c1[c];
        }
      }
      break;
    }
    case TextureKind::checker: {
      const std::size_t cell = 2 + rng.below(11);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const bool on = ((y / cell) + (x / cell)) % 2 == 0;
          for (std::size_t c = 0; c < 3; ++c) tex.at(y, x, c) = on ? c0[c] : c1[c];
        }
      }
      break;
    }
    case TextureKind::perlin: {
      const std::size_t res = std::min<std::size_t>({8 + rng.below(9), height, width});
      const NoiseField f = perlin_field(height, width, res, 2, rng.next());
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const float t = static_cast<float>(0.5 * (f.at(y, x) + 1.0));
          for (std::size_t c = 0; c < 3; ++c) tex.at(y, x, c) = c0[c] + t * (c1[c] - c0[c]);
        }
      }
      break;
    }
  }
  return tex;
}

ImageTensor procedural_texture(std::size_t height, std::size_t width,
                               std::uint64_t seed) {
  SplitMix64 rng(seed);
  const auto kind = static_cast<TextureKind>(rng.below(3));
  return procedural_texture(height, width, kind, rng.next());
}

PseudoSample make_pseudo_sample(const ImageTensor& image, std::uint64_t seed,
                                const SynthConfig& config,
                                const ImageTensor* texture) {
  SplitMix64 rng(seed);
  const std::size_t res =
      std::min({config.base_res, image.height, image.width});
  BinaryMap mask;
  for (int attempt = 0;; ++attempt) {
    const NoiseField field =
        perlin_field(image.height, image.width, res, config.octaves, rng.next());
    mask = binarize_mask(field, config.threshold);
    if (mask.count() > 0) break;
    if (attempt == 15) throw DataError("empty pseudo mask");
  }
  const std::uint64_t tex_seed = rng.next();
  const double opacity = rng.uniform(config.opacity_min, config.opacity_max);
  ImageTensor tex = texture ? *texture : procedural_texture(image.height, image.width, tex_seed);
  if (tex.channels != image.channels) throw DataError("shape mismatch");
  return synthesize_pseudo(image, mask, tex, opacity, config.patch_size);
}

}  // namespace dice
