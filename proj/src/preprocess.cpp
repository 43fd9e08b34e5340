#include "dice/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dice/error.hpp"

namespace dice {
namespace {

double source_coord(std::size_t i, std::size_t src, std::size_t dst) {
  if (dst <= 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
}

void check_stats(const ImageTensor& image, std::span<const double> mean,
                 std::span<const double> stddev) {
  if (mean.size() != image.channels || stddev.size() != image.channels) {
    throw DataError("channel statistics do not match image channels");
  }
  for (double s : stddev) {
    if (!(s > 0.0)) throw DataError("std must be positive");
  }
}

}  // namespace

ImageTensor resize_bilinear(const ImageTensor& image, std::size_t target_h) {
  if (image.height == 0 || image.width == 0 || image.channels == 0 || target_h == 0) {
    throw DataError("zero-dim image");
  }
  const auto target_w = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(image.width) *
                                               static_cast<double>(target_h) /
                                               static_cast<double>(image.height))));
  if (target_h == image.height && target_w == image.width) return image;

  ImageTensor out(target_h, target_w, image.channels);
  for (std::size_t y = 0; y < target_h; ++y) {
    const double sy = source_coord(y, image.height, target_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double sx = source_coord(x, image.width, target_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double a = image.at(y0, x0, c), b = image.at(y0, x1, c);
        const double d = image.at(y1, x0, c), e = image.at(y1, x1, c);
        const double top = a + fx * (b - a);
        const double bot = d + fx * (e - d);
        out.at(y, x, c) = static_cast<float>(top + fy * (bot - top));
      }
    }
  }
  return out;
}

BinaryMap resize_mask_nearest(const BinaryMap& mask, std::size_t target_h,
                              std::size_t target_w) {
  if (mask.height == target_h && mask.width == target_w) return mask;
  if (mask.height == 0 || mask.width == 0 || target_h == 0 || target_w == 0) {
    throw DataError("zero-dim mask");
  }
  BinaryMap out(target_h, target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * target_h));
    for (std::size_t x = 0; x < target_w; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * target_w));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

ImageTensor normalize_channels(const ImageTensor& image, std::span<const double> mean,
                               std::span<const double> stddev) {
  check_stats(image, mean, stddev);
  ImageTensor out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t c = i % image.channels;
    out.data[i] = static_cast<float>((static_cast<double>(image.data[i]) - mean[c]) / stddev[c]);
  }
  return out;
}

ImageTensor denormalize_channels(const ImageTensor& image, std::span<const double> mean,
                                 std::span<const double> stddev) {
  check_stats(image, mean, stddev);
  ImageTensor out = image;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const std::size_t c = i % image.channels;
    out.data[i] = static_cast<float>(static_cast<double>(image.data[i]) * stddev[c] + mean[c]);
  }
  return out;
}

TilePlan plan_tiles(std::size_t height, std::size_t width) {
  if (height == 0 || width < height) {
    throw DataError("image narrower than one tile (width " + std::to_string(width) +
                    " < " + std::to_string(height) + ")");
  }
  if (width > 2 * height) {
    throw DataError("image too wide for two-tile split (width " + std::to_string(width) +
                    " > " + std::to_string(2 * height) + ")");
  }
  TilePlan plan{{{0, 0, height}}, width, height};
  if (width > height) plan.tiles.push_back({width - height, 0, height});
  return plan;
}

TiledImage tile_split(const ImageTensor& image, std::size_t side) {
  if (image.height != side) {
    throw DataError("tile_split expects image height " + std::to_string(side));
  }
  TiledImage out{plan_tiles(image.height, image.width), {}};
  for (const Tile& t : out.plan.tiles) {
    ImageTensor tile(t.side, t.side, image.channels);
    for (std::size_t y = 0; y < t.side; ++y) {
      const float* src = image.data.data() + ((t.y_offset + y) * image.width + t.x_offset) * image.channels;
      std::copy(src, src + t.side * image.channels, tile.data.data() + y * t.side * image.channels);
    }
    out.tiles.push_back(std::move(tile));
  }
  return out;
}

AnomalyMap tile_merge(const std::vector<AnomalyMap>& maps, const TilePlan& plan) {
  if (maps.size() != plan.tiles.size() || maps.empty()) {
    throw DataError("tile plan and map count mismatch");
  }
  AnomalyMap sum(plan.original_h, plan.original_w, maps.front().resolution, 0.0);
  std::vector<unsigned> cover(sum.size(), 0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Tile& t = plan.tiles[i];
    const AnomalyMap& m = maps[i];
    if (m.height != t.side || m.width != t.side || t.y_offset + t.side > plan.original_h ||
        t.x_offset + t.side > plan.original_w) {
      throw DataError("shape mismatch");
    }
    for (std::size_t y = 0; y < t.side; ++y) {
      for (std::size_t x = 0; x < t.side; ++x) {
        const std::size_t o = (t.y_offset + y) * plan.original_w + t.x_offset + x;
        sum.values[o] += m.at(y, x);
        cover[o] += 1;
      }
    }
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    if (cover[i] == 0) throw DataError("tile plan leaves pixels uncovered");
    sum.values[i] /= static_cast<double>(cover[i]);
  }
  return sum;
}

}  // namespace dice
