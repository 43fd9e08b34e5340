#pragma once

#include <array>
#include <span>
#include <cstddef>
#include <vector>

#include "dice/image.hpp"
#include "dice/scoring.hpp"

namespace dice {

// OpenAI CLIP preprocessing constants.
inline constexpr std::array<double, 3> kClipMean = {0.48145466, 0.4578275, 0.40821073};
inline constexpr std::array<double, 3> kClipStd = {0.26862954, 0.26130258, 0.27577711};

// Aspect-preserving, corner-aligned bilinear resize to target_h rows; the
// width is round(W * target_h / H), at least 1.
ImageTensor resize_bilinear(const ImageTensor& image, std::size_t target_h = 240);

// Nearest-neighbour resize of a binary mask to an exact size.
BinaryMap resize_mask_nearest(const BinaryMap& mask, std::size_t target_h,
                              std::size_t target_w);

// (x - mean_c) / std_c per channel; std must be positive.
ImageTensor normalize_channels(const ImageTensor& image,
                               std::span<const double> mean,
                               std::span<const double> stddev);
ImageTensor denormalize_channels(const ImageTensor& image,
                                 std::span<const double> mean,
                                 std::span<const double> stddev);

struct Tile {
  std::size_t x_offset = 0;
  std::size_t y_offset = 0;
  std::size_t side = 240;
};

struct TilePlan {
  std::vector<Tile> tiles;
  std::size_t original_w = 0;
  std::size_t original_h = 0;
};

// Square tiles of side = image height: one tile when W == H, otherwise a
// left-aligned and a right-aligned tile. Requires H <= W <= 2H.
TilePlan plan_tiles(std::size_t height, std::size_t width);

struct TiledImage {
  TilePlan plan;
  std::vector<ImageTensor> tiles;
};

// Splits an image of height side (default 240) into the planned tiles.
TiledImage tile_split(const ImageTensor& image, std::size_t side = 240);

// Each output pixel is the mean of every tile map covering it.
AnomalyMap tile_merge(const std::vector<AnomalyMap>& maps, const TilePlan& plan);

}  // namespace dice
