#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dice/image.hpp"

namespace dice {

// Scales v to unit L2 norm (norm accumulated in f64). A vector whose norm is
// already within kUnitTolerance of 1 is left untouched, so renormalizing a
// normalized vector is the identity. Throws DataError(zero_norm_message) for
// zero or non-finite norms.
inline constexpr double kUnitTolerance = 4.0 * 1.1920929e-7;
void normalize_in_place(std::span<float> v, const char* zero_norm_message);
void normalize_in_place(std::span<double> v, const char* zero_norm_message);

// h x w grid of d-dimensional unit-norm patch tokens, row-major.
class PatchTokenGrid {
 public:
  PatchTokenGrid() = default;

  // Validates finiteness and normalizes every token.
  PatchTokenGrid(std::size_t h, std::size_t w, std::size_t d,
                 std::vector<float> values);

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t dim() const { return d_; }
  std::size_t size() const { return h_ * w_; }

  std::span<const float> token(std::size_t j, std::size_t k) const {
    return {values_.data() + (j * w_ + k) * d_, d_};
  }
  std::span<const float> token(std::size_t index) const {
    return {values_.data() + index * d_, d_};
  }
  const std::vector<float>& values() const { return values_; }

  bool operator==(const PatchTokenGrid&) const = default;

 private:
  std::size_t h_ = 0, w_ = 0, d_ = 0;
  std::vector<float> values_;
};

// Unit-norm global image embedding from the Q-K-V path.
class ClassToken {
 public:
  ClassToken() = default;
  explicit ClassToken(std::vector<float> v);

  std::span<const float> values() const { return v_; }
  std::size_t dim() const { return v_.size(); }

  bool operator==(const ClassToken&) const = default;

 private:
  std::vector<float> v_;
};

// Everything the scorer needs for one image.
struct FeatureBundle {
  std::string id;
  ClassToken class_token;
  PatchTokenGrid patch_grid;
  std::optional<PatchTokenGrid> pseudo_patch_grid;
  std::optional<BinaryMap> pseudo_mask;
  // Source image size, when known (used to size pixel maps).
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  // Throws DataError("shape mismatch") when the pseudo grid disagrees with
  // the patch grid or the class token dim differs.
  void validate() const;

  bool operator==(const FeatureBundle&) const = default;
};

// Bundle directory layout: class.dtf, patch.dtf, optional pseudo_patch.dtf
// and pseudo_mask.dtf, plus meta.json {"id","h","w","d"}.
void write_feature_bundle(const FeatureBundle& bundle,
                          const std::string& directory);
FeatureBundle load_feature_bundle(const std::string& directory);

}  // namespace dice
