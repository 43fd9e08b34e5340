#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dice/prompts.hpp"
#include "dice/tokens.hpp"

namespace dice {

enum class Resolution { patch, pixel };

// Row-major grid of anomaly scores.
struct AnomalyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  Resolution resolution = Resolution::patch;

  AnomalyMap() = default;
  AnomalyMap(std::size_t h, std::size_t w, Resolution res, double fill = 0.0)
      : height(h), width(w), values(h * w, fill), resolution(res) {}

  double& at(std::size_t j, std::size_t k) { return values[j * width + k]; }
  double at(std::size_t j, std::size_t k) const { return values[j * width + k]; }
  std::size_t size() const { return values.size(); }

  double max() const;
  double min() const;
  // First maximum in row-major order.
  std::pair<std::size_t, std::size_t> argmax() const;

  bool operator==(const AnomalyMap&) const = default;
};

struct FusionWeights {
  double lambda1 = 1.0;  // A^V in the localization score
  double lambda2 = 1.5;  // A^T in the localization score
  double lambda3 = 1.0;  // language class score
  double lambda4 = 1.0;  // max A^V
  double lambda5 = 1.0;  // max A^T

  // Throws ConfigError on negative weights or when all weights of one score
  // are zero.
  void validate() const;
};

// Softmax over the two similarities divided by tau, evaluated as a logistic of
// their difference so that tiny tau cannot overflow.
double language_score_from_similarities(double sim_anomalous, double sim_normal,
                                        double tau);

double language_score(const ClassToken& v, const TextTokenPair& text);

AnomalyMap language_map(const PatchTokenGrid& grid, const TextTokenPair& text);

// Per query patch: min over every patch of every reference of (1 - cos sim),
// clamped to [0, 2]. References may have any h, w but must share d.
AnomalyMap visual_reference_map(const PatchTokenGrid& query,
                                std::span<const PatchTokenGrid* const> references);
AnomalyMap visual_reference_map(const PatchTokenGrid& query,
                                const std::vector<PatchTokenGrid>& references);

AnomalyMap joint_map(const AnomalyMap& a_v, const AnomalyMap& a_l);

AnomalyMap fuse_localization(const AnomalyMap& a_v, const AnomalyMap& a_t,
                             const FusionWeights& w);

double fuse_classification(double a_cls_lang, const AnomalyMap& a_v,
                           const AnomalyMap& a_t, const FusionWeights& w);

// Corner-aligned bilinear upsampling to target_h x target_w.
AnomalyMap upsample_map(const AnomalyMap& map, std::size_t target_h,
                        std::size_t target_w);

}  // namespace dice
