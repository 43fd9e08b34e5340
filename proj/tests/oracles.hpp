#pragma once

// Brute-force reference implementations used by the unit tests and the
// acceptance suite. They share no code with the engine beyond plain types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <set>
#include <vector>

#include "dice/image.hpp"
#include "dice/rng.hpp"
#include "dice/scoring.hpp"
#include "dice/tokens.hpp"

namespace oracle {

inline double logistic_score(double sa, double sn, double tau) {
  return 1.0 / (1.0 + std::exp(-(sa - sn) / tau));
}

// P(pos > neg) + P(pos == neg) / 2 over every positive/negative pair.
inline double auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Precision/recall at "score >= t" for every distinct t, high to low.
struct PrPoint {
  double precision, recall;
};
inline std::vector<PrPoint> pr_points(const std::vector<double>& s,
                                      const std::vector<std::uint8_t>& y) {
  const std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double npos = 0.0;
  for (auto v : y) npos += v;
  std::vector<PrPoint> out;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp) += 1.0;
    }
    out.push_back({tp / (tp + fp), tp / npos});
  }
  return out;
}

inline double average_precision(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : pr_points(s, y)) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

inline double f1_max(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double best = 0.0;
  for (const auto& p : pr_points(s, y)) {
    if (p.precision + p.recall > 0.0) {
      best = std::max(best, 2.0 * p.precision * p.recall / (p.precision + p.recall));
    }
  }
  return best;
}

// BFS flood fill, 8-connected, regions numbered in row-major discovery order.
inline std::vector<std::uint32_t> flood_labels(const dice::BinaryMap& m, std::size_t& count) {
  std::vector<std::uint32_t> lab(m.data.size(), 0);
  count = 0;
  for (std::size_t start = 0; start < m.data.size(); ++start) {
    if (!m.data[start] || lab[start]) continue;
    lab[start] = static_cast<std::uint32_t>(++count);
    std::deque<std::size_t> q{start};
    while (!q.empty()) {
      const std::size_t p = q.front();
      q.pop_front();
      const long py = static_cast<long>(p / m.width), px = static_cast<long>(p % m.width);
      for (long dy = -1; dy <= 1; ++dy) {
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = py + dy, nx = px + dx;
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(m.height) ||
              nx >= static_cast<long>(m.width)) {
            continue;
          }
          const std::size_t n = static_cast<std::size_t>(ny) * m.width + static_cast<std::size_t>(nx);
          if (m.data[n] && !lab[n]) {
            lab[n] = lab[start];
            q.push_back(n);
          }
        }
      }
    }
  }
  return lab;
}

// AUPRO by direct counting: at each distinct threshold (high to low) the FPR
// over all negative pixels and the mean covered fraction over every region.
// The curve starts at (0, 0); trapezoids up to the limit, interpolated there.
inline double aupro(const std::vector<dice::AnomalyMap>& maps, const std::vector<dice::BinaryMap>& gts,
                    double limit) {
  struct Region {
    std::size_t image;
    std::vector<std::size_t> pixels;
  };
  std::vector<Region> regions;
  std::set<double, std::greater<>> thresholds;
  double negatives = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    std::size_t count = 0;
    const auto lab = flood_labels(gts[i], count);
    std::vector<Region> local(count, Region{i, {}});
    for (std::size_t p = 0; p < lab.size(); ++p) {
      if (lab[p]) local[lab[p] - 1].pixels.push_back(p);
      else negatives += 1.0;
    }
    regions.insert(regions.end(), local.begin(), local.end());
    thresholds.insert(maps[i].values.begin(), maps[i].values.end());
  }
  std::vector<std::pair<double, double>> curve{{0.0, 0.0}};
  for (double t : thresholds) {
    double fp = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t p = 0; p < maps[i].values.size(); ++p) {
        if (!gts[i].data[p] && maps[i].values[p] >= t) fp += 1.0;
      }
    }
    double pro = 0.0;
    for (const auto& r : regions) {
      double hit = 0.0;
      for (auto p : r.pixels) hit += maps[r.image].values[p] >= t;
      pro += hit / static_cast<double>(r.pixels.size());
    }
    curve.emplace_back(fp / negatives, pro / static_cast<double>(regions.size()));
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto [x0, y0] = curve[i - 1];
    auto [x1, y1] = curve[i];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += 0.5 * (x1 - x0) * (y0 + y1);
  }
  return area / limit;
}

// Exhaustive nearest-neighbour cosine distance per query patch, from the raw
// (unnormalized) token values, clamped to [0, 2].
inline std::vector<double> nn_distance(const std::vector<std::vector<double>>& query,
                                       const std::vector<std::vector<double>>& refs) {
  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
  };
  std::vector<double> out;
  for (const auto& q0 : query) {
    const auto q = unit(q0);
    double best = 2.0;
    for (const auto& r0 : refs) {
      const auto r = unit(r0);
      double dot = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) dot += q[k] * r[k];
      best = std::min(best, 1.0 - dot);
    }
    out.push_back(std::clamp(best, 0.0, 2.0));
  }
  return out;
}

inline std::vector<float> random_vector(dice::SplitMix64& rng, std::size_t d) {
  std::vector<float> v(d);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

inline dice::PatchTokenGrid random_grid(dice::SplitMix64& rng, std::size_t h, std::size_t w,
                                        std::size_t d) {
  std::vector<float> v(h * w * d);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return dice::PatchTokenGrid(h, w, d, std::move(v));
}

}  // namespace oracle
