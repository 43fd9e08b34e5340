#include "dice/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "dice/error.hpp"
#include "dice/simd.hpp"

namespace dice {
namespace {

void require_same_shape(const AnomalyMap& a, const AnomalyMap& b) {
  if (a.height != b.height || a.width != b.width || a.resolution != b.resolution) {
    throw DataError("shape mismatch");
  }
}

// 1 / (1 + exp(-x)) without overflow for large |x|.
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double AnomalyMap::max() const {
  if (values.empty()) throw DataError("empty map");
  return *std::max_element(values.begin(), values.end());
}

double AnomalyMap::min() const {
  if (values.empty()) throw DataError("empty map");
  return *std::min_element(values.begin(), values.end());
}

std::pair<std::size_t, std::size_t> AnomalyMap::argmax() const {
  if (values.empty()) throw DataError("empty map");
  const auto idx = static_cast<std::size_t>(
      std::max_element(values.begin(), values.end()) - values.begin());
  return {idx / width, idx % width};
}

void FusionWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5}) {
    if (!(l >= 0.0) || !std::isfinite(l)) {
      throw ConfigError("fusion weights must be finite and non-negative");
    }
  }
  if (lambda1 + lambda2 <= 0.0) {
    throw ConfigError("lambda1 and lambda2 cannot both be zero");
  }
  if (lambda3 + lambda4 + lambda5 <= 0.0) {
    throw ConfigError("lambda3, lambda4 and lambda5 cannot all be zero");
  }
}

double language_score_from_similarities(double sim_anomalous, double sim_normal,
                                        double tau) {
  return logistic((sim_anomalous - sim_normal) / tau);
}

double language_score(const ClassToken& v, const TextTokenPair& text) {
  if (v.dim() != text.dim()) throw DataError("shape mismatch");
  const auto& k = simd::kernels();
  const double sa = k.dot_f32(v.values().data(), text.anomalous.data(), v.dim());
  const double sn = k.dot_f32(v.values().data(), text.normal.data(), v.dim());
  return language_score_from_similarities(sa, sn, text.tau);
}

AnomalyMap language_map(const PatchTokenGrid& grid, const TextTokenPair& text) {
  if (grid.dim() != text.dim()) throw DataError("shape mismatch");
  AnomalyMap map(grid.height(), grid.width(), Resolution::patch);
  std::vector<double> sa(grid.size()), sn(grid.size());
  simd::kernels().dot2_rows_f32(grid.values().data(), grid.size(), grid.dim(),
                                text.anomalous.data(), text.normal.data(),
                                sa.data(), sn.data());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    map.values[i] = language_score_from_similarities(sa[i], sn[i], text.tau);
  }
  return map;
}

AnomalyMap visual_reference_map(const PatchTokenGrid& query,
                                std::span<const PatchTokenGrid* const> references) {
  if (references.empty()) throw DataError("no reference provided");
  AnomalyMap map(query.height(), query.width(), Resolution::patch, 2.0);
  const auto& k = simd::kernels();
  for (const PatchTokenGrid* ref : references) {
    if (ref->dim() != query.dim()) throw DataError("shape mismatch");
    k.min_cosine_distance(query.values().data(), query.size(),
                          ref->values().data(), ref->size(), query.dim(),
                          map.values.data());
  }
  for (double& v : map.values) v = std::clamp(v, 0.0, 2.0);
  return map;
}

AnomalyMap visual_reference_map(const PatchTokenGrid& query,
                                const std::vector<PatchTokenGrid>& references) {
  std::vector<const PatchTokenGrid*> ptrs;
  ptrs.reserve(references.size());
  for (const auto& r : references) ptrs.push_back(&r);
  return visual_reference_map(query, std::span<const PatchTokenGrid* const>(ptrs));
}

AnomalyMap joint_map(const AnomalyMap& a_v, const AnomalyMap& a_l) {
  require_same_shape(a_v, a_l);
  AnomalyMap out = a_v;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += a_l.values[i];
  return out;
}

AnomalyMap fuse_localization(const AnomalyMap& a_v, const AnomalyMap& a_t,
                             const FusionWeights& w) {
  require_same_shape(a_v, a_t);
  AnomalyMap out = a_v;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.values[i] = w.lambda1 * a_v.values[i] + w.lambda2 * a_t.values[i];
  }
  return out;
}

double fuse_classification(double a_cls_lang, const AnomalyMap& a_v,
                           const AnomalyMap& a_t, const FusionWeights& w) {
  return w.lambda3 * a_cls_lang + w.lambda4 * a_v.max() + w.lambda5 * a_t.max();
}

AnomalyMap upsample_map(const AnomalyMap& map, std::size_t target_h,
                        std::size_t target_w) {
  if (map.values.empty() || target_h == 0 || target_w == 0 ||
      target_h < map.height || target_w < map.width) {
    throw DataError("degenerate target dims");
  }
  AnomalyMap out(target_h, target_w, Resolution::pixel);
  const double lo = map.min();
  const double hi = map.max();
  const auto coord = [](std::size_t i, std::size_t src, std::size_t dst) {
    return dst > 1 ? static_cast<double>(i) * static_cast<double>(src - 1) /
                         static_cast<double>(dst - 1)
                   : 0.0;
  };
  for (std::size_t y = 0; y < target_h; ++y) {
    const double sy = coord(y, map.height, target_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, map.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < target_w; ++x) {
      const double sx = coord(x, map.width, target_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, map.width - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = map.at(y0, x0) + fx * (map.at(y0, x1) - map.at(y0, x0));
      const double bot = map.at(y1, x0) + fx * (map.at(y1, x1) - map.at(y1, x0));
      out.at(y, x) = std::clamp(top + fy * (bot - top), lo, hi);
    }
  }
  return out;
}

}  // namespace dice
