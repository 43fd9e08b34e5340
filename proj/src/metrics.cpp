#include "dice/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dice/error.hpp"

namespace dice {
namespace {

struct Counts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

Counts count_labels(const ScoredSet& set) {
  Counts c;
  for (auto l : set.labels) (l ? c.positives : c.negatives) += 1;
  return c;
}

// Indices sorted by descending score (stable, so ties keep input order).
std::vector<std::size_t> order_descending(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Number of leading entries of a descending-sorted list included at each
// evaluated threshold: every distinct-score boundary, or the boundaries of
// kQuantileThresholds quantile thresholds for large inputs.
std::vector<std::size_t> threshold_cuts(const std::vector<double>& sorted_desc) {
  const std::size_t n = sorted_desc.size();
  std::vector<std::size_t> cuts;
  if (n <= kExactThresholdLimit) {
    for (std::size_t i = 1; i <= n; ++i) {
      if (i == n || sorted_desc[i] != sorted_desc[i - 1]) cuts.push_back(i);
    }
    return cuts;
  }
  for (std::size_t q = 0; q < kQuantileThresholds; ++q) {
    // q-th quantile from the top; include every entry >= the threshold.
    const std::size_t pos = (q * (n - 1)) / (kQuantileThresholds - 1);
    const double t = sorted_desc[pos];
    const auto end = std::upper_bound(sorted_desc.begin(), sorted_desc.end(), t,
                                      [](double v, double e) { return v > e; });
    const auto cut = static_cast<std::size_t>(end - sorted_desc.begin());
    if (cuts.empty() || cuts.back() != cut) cuts.push_back(cut);
  }
  return cuts;
}

}  // namespace

void ScoredSet::validate() const {
  if (scores.size() != labels.size() || scores.size() < 2) {
    throw DataError("scored set needs equal lengths >= 2");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw DataError("non-finite score");
  }
  for (auto l : labels) {
    if (l > 1) throw DataError("labels must be 0 or 1");
  }
}

double auroc(const ScoredSet& set) {
  set.validate();
  const Counts c = count_labels(set);
  if (c.positives == 0 || c.negatives == 0) throw DataError("undefined AUROC");
  std::vector<std::size_t> idx(set.scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return set.scores[a] < set.scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j < idx.size() && set.scores[idx[j]] == set.scores[idx[i]]) ++j;
    // ranks i+1 .. j share their average
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (set.labels[idx[k]]) positive_rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(c.positives);
  const double n = static_cast<double>(c.negatives);
  return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double average_precision(const ScoredSet& set) {
  set.validate();
  const Counts c = count_labels(set);
  if (c.positives == 0) throw DataError("undefined AP");
  const auto idx = order_descending(set.scores);
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (set.labels[idx[i]] ? tp : fp) += 1;
    const bool group_end =
        i + 1 == idx.size() || set.scores[idx[i + 1]] != set.scores[idx[i]];
    if (!group_end) continue;
    const double recall = static_cast<double>(tp) / static_cast<double>(c.positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double f1_max(const ScoredSet& set) {
  set.validate();
  const Counts c = count_labels(set);
  if (c.positives == 0) throw DataError("undefined F1Max");
  const auto idx = order_descending(set.scores);
  std::vector<double> sorted(idx.size());
  std::vector<std::size_t> tp_prefix(idx.size() + 1, 0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sorted[i] = set.scores[idx[i]];
    tp_prefix[i + 1] = tp_prefix[i] + set.labels[idx[i]];
  }
  double best = 0.0;
  for (std::size_t cut : threshold_cuts(sorted)) {
    const double tp = static_cast<double>(tp_prefix[cut]);
    const double predicted = static_cast<double>(cut);
    const double f1 = 2.0 * tp / (predicted + static_cast<double>(c.positives));
    best = std::max(best, f1);
  }
  return best;
}

std::vector<std::size_t> RegionLabeling::region_sizes() const {
  std::vector<std::size_t> sizes(region_count, 0);
  for (auto l : labels) {
    if (l) ++sizes[l - 1];
  }
  return sizes;
}

RegionLabeling connected_components(const BinaryMap& mask) {
  const std::size_t h = mask.height, w = mask.width;
  std::vector<std::uint32_t> provisional(h * w, 0);
  std::vector<std::uint32_t> parent{0};

  const auto find = [&](std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  const auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  };

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!mask.at(y, x)) continue;
      std::uint32_t label = 0;
      // Already-visited 8-neighbours: W, NW, N, NE.
      const std::pair<long, long> offsets[] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
      for (auto [dy, dx] : offsets) {
        const long ny = static_cast<long>(y) + dy;
        const long nx = static_cast<long>(x) + dx;
        if (ny < 0 || nx < 0 || nx >= static_cast<long>(w)) continue;
        const std::uint32_t nl = provisional[static_cast<std::size_t>(ny) * w +
                                             static_cast<std::size_t>(nx)];
        if (!nl) continue;
        if (!label) {
          label = nl;
        } else {
          unite(label, nl);
        }
      }
      if (!label) {
        label = static_cast<std::uint32_t>(parent.size());
        parent.push_back(label);
      }
      provisional[y * w + x] = label;
    }
  }

  RegionLabeling out{h, w, std::vector<std::uint32_t>(h * w, 0), 0};
  std::vector<std::uint32_t> final_id(parent.size(), 0);
  for (std::size_t i = 0; i < provisional.size(); ++i) {
    if (!provisional[i]) continue;
    const std::uint32_t root = find(provisional[i]);
    if (!final_id[root]) final_id[root] = static_cast<std::uint32_t>(++out.region_count);
    out.labels[i] = final_id[root];
  }
  return out;
}

std::vector<ProCurvePoint> pro_curve(std::span<const AnomalyMap> maps,
                                     std::span<const BinaryMap> gts) {
  if (maps.size() != gts.size()) throw DataError("shape mismatch");
  std::vector<double> scores;
  std::vector<std::uint32_t> region;  // global region id, 0 = background
  std::vector<std::size_t> region_size{0};
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    const auto& gt = gts[m];
    if (map.height != gt.height || map.width != gt.width) throw DataError("shape mismatch");
    const RegionLabeling lab = connected_components(gt);
    const auto offset = static_cast<std::uint32_t>(region_size.size() - 1);
    for (auto s : lab.region_sizes()) region_size.push_back(s);
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      if (!std::isfinite(map.values[i])) throw DataError("non-finite score");
      scores.push_back(map.values[i]);
      region.push_back(lab.labels[i] ? lab.labels[i] + offset : 0);
    }
  }
  const std::size_t regions = region_size.size() - 1;
  if (regions == 0) throw DataError("undefined PRO");
  std::size_t negatives = 0;
  for (auto r : region) negatives += r == 0;
  if (negatives == 0) throw DataError("undefined PRO");

  const auto idx = order_descending(scores);
  std::vector<double> sorted(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) sorted[i] = scores[idx[i]];

  std::vector<ProCurvePoint> curve{{0.0, 0.0}};
  std::size_t included = 0, fp = 0;
  double overlap_sum = 0.0;
  for (std::size_t cut : threshold_cuts(sorted)) {
    for (; included < cut; ++included) {
      const std::uint32_t r = region[idx[included]];
      if (r) {
        overlap_sum += 1.0 / static_cast<double>(region_size[r]);
      } else {
        ++fp;
      }
    }
    curve.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                     overlap_sum / static_cast<double>(regions)});
  }
  return curve;
}

double integrate_pro_curve(const std::vector<ProCurvePoint>& curve, double fpr_limit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("fpr limit must be in (0, 1]");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (a.fpr >= fpr_limit) break;
    if (b.fpr <= fpr_limit) {
      area += (b.fpr - a.fpr) * 0.5 * (a.pro + b.pro);
    } else {
      const double pro_at = a.pro + (b.pro - a.pro) * (fpr_limit - a.fpr) / (b.fpr - a.fpr);
      area += (fpr_limit - a.fpr) * 0.5 * (a.pro + pro_at);
      break;
    }
  }
  return area / fpr_limit;
}

double aupro(std::span<const AnomalyMap> maps, std::span<const BinaryMap> gts,
             double fpr_limit) {
  return integrate_pro_curve(pro_curve(maps, gts), fpr_limit);
}

}  // namespace dice
