#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "dice/image.hpp"
#include "dice/tokens.hpp"

namespace dice {

// Dense row-major f64 matrix used by the toy encoder.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

// Row-wise softmax(scale * A A^T) weights for the value-value attention.
Matrix vv_attention_weights(const Matrix& values, double scale);

// One value-value attention block: queries and keys are both the values.
//   out = softmax(scale * V V^T) V proj^T + V
// Throws DataError("non-finite tokens") on non-finite input.
Matrix vv_attention_block(const Matrix& values, const Matrix& proj,
                          double scale);

struct ToyEncoderConfig {
  std::size_t patch_size = 16;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t channels = 3;
};

// Deterministic stand-in for a frozen CLIP visual tower. Weights are drawn
// from SplitMix64(seed) as uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) in the
// order: patch embedding (dim x patch_size^2*channels), class embedding
// (dim), then per layer Wq, Wk, Wv, Wo (dim x dim each).
//
// The patch embedding feeds two parallel paths: standard Q-K-V attention
// over [class; patches] produces the class token, and a stack of
// vv_attention_block layers (sharing Wo) over the patches produces the patch
// tokens.
class ToyEncoder {
 public:
  ToyEncoder(std::uint64_t seed, ToyEncoderConfig config = {});

  const ToyEncoderConfig& config() const { return config_; }

  // Throws DataError("image not patch-aligned") when H or W is not a positive
  // multiple of the patch size (or H < 16).
  FeatureBundle encode(const ImageTensor& image, std::string id = {}) const;

 private:
  Matrix embed_patches(const ImageTensor& image) const;

  ToyEncoderConfig config_;
  Matrix patch_embed_;
  std::vector<double> class_embed_;
  std::vector<Matrix> wq_, wk_, wv_, wo_;
};

FeatureBundle toy_encode_image(const ImageTensor& image, std::uint64_t seed,
                               const ToyEncoderConfig& config = {});

// Hash-based bag-of-words text embedding: every whitespace-separated word
// maps to a uniform [-1, 1]^dim vector seeded by FNV-1a(word) ^ seed; the
// prompt embedding is the normalized sum.
std::vector<float> toy_text_embedding(std::string_view prompt, std::size_t dim,
                                      std::uint64_t seed);

}  // namespace dice
