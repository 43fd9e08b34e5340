#include <cmath>
#include <numbers>
#include <string>

#include "dice/error.hpp"
#include "dice/image.hpp"
#include "dice/pipeline.hpp"
#include "dice/rng.hpp"
#include "dice/synth.hpp"

namespace dice {
namespace fs = std::filesystem;

namespace {

// Soft diagonal stripes over a warm background with a centred square "part".
ImageTensor normal_image(std::size_t size, SplitMix64& rng) {
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double shift = rng.uniform(-0.03, 0.03);
  const auto half = static_cast<double>(size) * rng.uniform(0.22, 0.28);
  const double cx = static_cast<double>(size) * rng.uniform(0.45, 0.55);
  const double cy = static_cast<double>(size) * rng.uniform(0.45, 0.55);
  ImageTensor img(size, size, 3);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double s = 0.5 + 0.5 * std::sin(0.35 * static_cast<double>(x + y) + phase);
      double rgb[3] = {0.55 + 0.05 * s + shift, 0.45 + 0.04 * s + shift, 0.3 + 0.02 * s};
      const bool inside = std::fabs(static_cast<double>(x) - cx) < half &&
                          std::fabs(static_cast<double>(y) - cy) < half;
      if (inside) {
        rgb[0] = 0.35 + shift;
        rgb[1] = 0.4 + 0.02 * s;
        rgb[2] = 0.6 + shift;
      }
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(rgb[c]);
    }
  }
  return img;
}

// Dark, slightly tinted stain colour with faint grain.
ImageTensor stain(std::size_t size, SplitMix64& rng) {
  const double base[3] = {rng.uniform(0.0, 0.15), rng.uniform(0.0, 0.15), rng.uniform(0.0, 0.15)};
  ImageTensor tex(size, size, 3);
  for (std::size_t i = 0; i < size * size; ++i) {
    const double grain = rng.uniform(-0.03, 0.03);
    for (std::size_t c = 0; c < 3; ++c) tex.data[i * 3 + c] = static_cast<float>(base[c] + grain);
  }
  return tex;
}

// Perlin blob restricted to a random window covering about a quarter of the
// image.
BinaryMap defect_mask(std::size_t size, std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (int attempt = 0; attempt < 32; ++attempt) {
    const BinaryMap blob = binarize_mask(perlin_field(size, size, 4, 1, rng.next()), 0.6);
    const std::size_t win = size / 2;
    const std::size_t y0 = static_cast<std::size_t>(rng.below(size - win + 1));
    const std::size_t x0 = static_cast<std::size_t>(rng.below(size - win + 1));
    BinaryMap mask(size, size);
    for (std::size_t y = y0; y < y0 + win; ++y) {
      for (std::size_t x = x0; x < x0 + win; ++x) mask.at(y, x) = blob.at(y, x);
    }
    if (mask.count() >= size * size / 64) return mask;
  }
  throw DataError("fixture could not draw a defect mask");
}

}  // namespace

DatasetManifest make_synthetic_fixture(std::uint64_t seed, std::size_t n_images,
                                       const fs::path& out_dir, std::size_t image_size) {
  if (n_images < 2) throw ConfigError("fixture needs at least 2 images");
  if (image_size < 16 || image_size % 16 != 0) {
    throw ConfigError("fixture image size must be a positive multiple of 16");
  }
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");

  DatasetManifest manifest;
  manifest.base_dir = out_dir;
  manifest.image_height = image_size;
  manifest.categories["widget"] = CategoryInfo{CategoryKind::object, {}};
  for (std::size_t i = 0; i < n_images; ++i) {
    const std::uint64_t s = mix_seed(seed, i);
    SplitMix64 rng(s);
    ImageTensor img = normal_image(image_size, rng);
    const bool anomalous = i % 2 == 1;
    char name[32];
    std::snprintf(name, sizeof name, "img_%04zu", i);
    ManifestEntry entry{name, "widget", {}, std::string("images/") + name + ".ppm", {},
                        anomalous ? 1 : 0};
    BinaryMap mask(image_size, image_size);
    if (anomalous) {
      mask = defect_mask(image_size, mix_seed(s, 1));
      const ImageTensor tex = stain(image_size, rng);
      img = synthesize_pseudo(img, mask, tex, rng.uniform(0.95, 1.0)).image;
    }
    write_ppm(img, out_dir / entry.image_path);
    entry.gt_mask_path = std::string("masks/") + name + ".pgm";
    write_mask(mask, out_dir / entry.gt_mask_path);
    manifest.entries.push_back(std::move(entry));
  }
  write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace dice
