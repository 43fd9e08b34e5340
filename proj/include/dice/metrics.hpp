#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dice/image.hpp"
#include "dice/scoring.hpp"

namespace dice {

struct ScoredSet {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 0 = normal, 1 = anomalous

  void validate() const;  // equal lengths >= 2, finite scores, labels in {0,1}
};

// P(s+ > s-) + P(s+ == s-)/2 via average ranks. Throws
// DataError("undefined AUROC") unless both classes are present.
double auroc(const ScoredSet& set);

// Step-wise AP over descending distinct score thresholds. Throws
// DataError("undefined AP") without positives.
double average_precision(const ScoredSet& set);

// Sets larger than this use quantile thresholds for F1Max and AUPRO.
inline constexpr std::size_t kExactThresholdLimit = 1'000'000;
inline constexpr std::size_t kQuantileThresholds = 1001;

// Max F1 over thresholds "score >= t" at every distinct score, or at
// kQuantileThresholds quantiles above kExactThresholdLimit entries.
double f1_max(const ScoredSet& set);

struct RegionLabeling {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint32_t> labels;  // 0 = background, regions 1..region_count
  std::size_t region_count = 0;

  std::vector<std::size_t> region_sizes() const;  // index r-1 -> size of region r
  bool operator==(const RegionLabeling&) const = default;
};

// 8-connected two-pass labeling; ids follow first encounter in row-major
// order.
RegionLabeling connected_components(const BinaryMap& mask);

struct ProCurvePoint {
  double fpr;
  double pro;
};

// Area under the PRO-vs-FPR curve from FPR 0 to fpr_limit (trapezoidal,
// linearly interpolated at the limit), divided by fpr_limit. PRO at a
// threshold is the mean over all ground-truth regions of the region's
// covered fraction. Throws DataError("undefined PRO") without regions.
double aupro(std::span<const AnomalyMap> maps, std::span<const BinaryMap> gts,
             double fpr_limit = 0.3);

// The (FPR, PRO) points the integral runs over, starting at (0, 0).
std::vector<ProCurvePoint> pro_curve(std::span<const AnomalyMap> maps,
                                     std::span<const BinaryMap> gts);

// Trapezoidal area of a monotone curve up to fpr_limit, normalized.
double integrate_pro_curve(const std::vector<ProCurvePoint>& curve, double fpr_limit);

}  // namespace dice
