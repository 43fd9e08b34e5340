#include <doctest.h>

#include <cmath>

#include "dice/error.hpp"
#include "dice/scoring.hpp"
#include "dice/simd.hpp"
#include "oracles.hpp"

using dice::AnomalyMap;
using dice::Resolution;

namespace {

AnomalyMap constant(std::size_t h, std::size_t w, double v) {
  return AnomalyMap(h, w, Resolution::patch, v);
}

// Text pair in 3-d with t_a = e1, t_n = e2.
dice::TextTokenPair axis_text(double tau) {
  return {{0.0f, 1.0f, 0.0f}, {1.0f, 0.0f, 0.0f}, tau};
}

}  // namespace

TEST_CASE("language score from similarities") {
  CHECK(dice::language_score_from_similarities(0.3, 0.3, 0.01) == 0.5);
  CHECK(dice::language_score_from_similarities(0.6, 0.4, 0.1) == doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(dice::language_score_from_similarities(0.6, 0.4, 0.1) ==
        doctest::Approx(oracle::logistic_score(0.6, 0.4, 0.1)).epsilon(1e-14));
  const double s = dice::language_score_from_similarities(0.6, 0.4, 1e-6);
  CHECK(s >= 1.0 - 1e-9);
  CHECK(std::isfinite(s));
  const double lo = dice::language_score_from_similarities(0.4, 0.6, 1e-6);
  CHECK(lo >= 0.0);
  CHECK(lo <= 1e-9);
}

TEST_CASE("language score of a class token") {
  const dice::ClassToken v({0.6f, 0.8f, 0.0f});
  CHECK(dice::language_score(v, axis_text(0.1)) ==
        doctest::Approx(oracle::logistic_score(0.6, 0.8, 0.1)).epsilon(1e-6));
}

TEST_CASE("language map on a constant grid") {
  std::vector<float> vals;
  for (int i = 0; i < 6; ++i) vals.insert(vals.end(), {0.3f, 0.5f, 0.2f});
  const dice::PatchTokenGrid g(2, 3, 3, vals);
  const auto text = axis_text(0.05);
  const auto m = dice::language_map(g, text);
  const double expected = dice::language_score(dice::ClassToken({0.3f, 0.5f, 0.2f}), text);
  for (double v : m.values) CHECK(v == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("language map matches the scalar oracle on a 2x2 grid") {
  // Tokens with hand-set inner products against t_a = e1, t_n = e2.
  const float c = 1.0f / std::sqrt(2.0f);
  const dice::PatchTokenGrid g(2, 2, 3, {1, 0, 0, 0, 1, 0, c, c, 0, 0, 0, 1});
  const auto m = dice::language_map(g, axis_text(0.1));
  const double sims[4][2] = {{1, 0}, {0, 1}, {c, c}, {0, 0}};
  for (int i = 0; i < 4; ++i) {
    CHECK(m.values[i] == doctest::Approx(oracle::logistic_score(sims[i][0], sims[i][1], 0.1)).epsilon(1e-6));
    CHECK(m.values[i] > 0.0);
    CHECK(m.values[i] < 1.0);
  }
  CHECK(m.resolution == Resolution::patch);
}

TEST_CASE("language map agrees across kernel sets") {
  dice::SplitMix64 rng(9);
  const auto g = oracle::random_grid(rng, 5, 7, 33);
  const std::vector<std::vector<float>> n{oracle::random_vector(rng, 33)}, a{oracle::random_vector(rng, 33)};
  const auto text = dice::aggregate_text_tokens(n, a, 0.01);
  const auto before = dice::simd::kernels().isa;
  dice::simd::force_isa(dice::simd::Isa::scalar);
  const auto s = dice::language_map(g, text);
  dice::simd::force_isa(before);
  const auto v = dice::language_map(g, text);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::fabs(s.values[i] - v.values[i]) < 1e-10);
}

TEST_CASE("visual map: self reference is zero") {
  dice::SplitMix64 rng(1);
  const auto q = oracle::random_grid(rng, 3, 3, 8);
  const auto m = dice::visual_reference_map(q, std::vector{q});
  for (double v : m.values) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("visual map: orthogonal patch scores 1") {
  const dice::PatchTokenGrid q(1, 2, 3, {1, 0, 0, 0, 1, 0});
  const dice::PatchTokenGrid r(1, 2, 3, {0, 1, 0, 0, 1, 0});
  const auto m = dice::visual_reference_map(q, std::vector{r});
  CHECK(m.values[0] == doctest::Approx(1.0));
  CHECK(m.values[1] == doctest::Approx(0.0));
}

TEST_CASE("visual map matches the brute-force oracle") {
  dice::SplitMix64 rng(21);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<std::vector<double>> q(9, std::vector<double>(8)), r(9, std::vector<double>(8));
    std::vector<float> qf, rf;
    for (auto& row : q) for (auto& x : row) { x = float(rng.uniform(-1, 1)); qf.push_back(float(x)); }
    for (auto& row : r) for (auto& x : row) { x = float(rng.uniform(-1, 1)); rf.push_back(float(x)); }
    const auto m = dice::visual_reference_map(dice::PatchTokenGrid(3, 3, 8, qf),
                                              std::vector{dice::PatchTokenGrid(3, 3, 8, rf)});
    const auto expected = oracle::nn_distance(q, r);
    for (std::size_t i = 0; i < 9; ++i) CHECK(std::fabs(m.values[i] - expected[i]) < 1e-6);
  }
}

TEST_CASE("visual map: antipodal reference clamps to 2 and errors") {
  const dice::PatchTokenGrid q(1, 1, 2, {1, 0});
  const dice::PatchTokenGrid r(1, 1, 2, {-1, 0});
  const auto m = dice::visual_reference_map(q, std::vector{r});
  CHECK(m.values[0] <= 2.0);
  CHECK(m.values[0] == doctest::Approx(2.0));
  CHECK_THROWS_WITH_AS(dice::visual_reference_map(q, std::vector<dice::PatchTokenGrid>{}),
                       doctest::Contains("no reference"), dice::DataError);
  const dice::PatchTokenGrid wrong(1, 1, 3, {1, 0, 0});
  CHECK_THROWS_AS(dice::visual_reference_map(q, std::vector{wrong}), dice::DataError);
}

TEST_CASE("joint map") {
  dice::SplitMix64 rng(2);
  AnomalyMap a(2, 3, Resolution::patch), b(2, 3, Resolution::patch);
  for (auto& v : a.values) v = rng.uniform();
  for (auto& v : b.values) v = rng.uniform();
  CHECK(dice::joint_map(constant(2, 3, 0.0), b) == b);
  CHECK(dice::joint_map(a, b) == dice::joint_map(b, a));
  for (double v : dice::joint_map(constant(2, 2, 0.3), constant(2, 2, 0.2)).values) {
    CHECK(v == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS(dice::joint_map(constant(2, 2, 0), constant(2, 3, 0)), dice::DataError);
}

TEST_CASE("fusion") {
  dice::FusionWeights w;
  CHECK(w.lambda1 == 1.0);
  CHECK(w.lambda2 == 1.5);
  CHECK(w.lambda3 == 1.0);
  CHECK(w.lambda4 == 1.0);
  CHECK(w.lambda5 == 1.0);

  dice::SplitMix64 rng(3);
  AnomalyMap av(3, 3, Resolution::patch), at(3, 3, Resolution::patch);
  for (auto& v : av.values) v = rng.uniform();
  for (auto& v : at.values) v = rng.uniform();

  dice::FusionWeights only_v = w;
  only_v.lambda2 = 0.0;
  only_v.lambda1 = 1.7;
  const auto f0 = dice::fuse_localization(av, at, only_v);
  for (std::size_t i = 0; i < 9; ++i) CHECK(f0.values[i] == 1.7 * av.values[i]);

  dice::FusionWeights scaled = w;
  scaled.lambda1 *= 2.5;
  scaled.lambda2 *= 2.5;
  const auto f1 = dice::fuse_localization(av, at, w);
  const auto f2 = dice::fuse_localization(av, at, scaled);
  for (std::size_t i = 0; i < 9; ++i) CHECK(f2.values[i] == doctest::Approx(2.5 * f1.values[i]));
  CHECK(f1.argmax() == f2.argmax());

  dice::FusionWeights cls = w;
  cls.lambda4 = cls.lambda5 = 0.0;
  CHECK(dice::fuse_classification(0.4, av, at, cls) == 0.4);
  AnomalyMap v2 = constant(2, 2, 0.1), t2 = constant(2, 2, 0.3);
  v2.values[1] = 0.2;
  t2.values[3] = 0.7;
  CHECK(dice::fuse_classification(0.5, v2, t2, w) == doctest::Approx(1.4));

  dice::FusionWeights bad = w;
  bad.lambda1 = -1.0;
  CHECK_THROWS_AS(bad.validate(), dice::ConfigError);
}

TEST_CASE("upsampling") {
  for (double v : dice::upsample_map(constant(2, 3, 0.7), 32, 48).values) {
    CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
  }
  for (double v : dice::upsample_map(constant(1, 1, 0.25), 5, 4).values) CHECK(v == 0.25);
  AnomalyMap x(2, 2, Resolution::patch);
  x.values = {0, 1, 1, 0};
  const auto u = dice::upsample_map(x, 3, 3);
  CHECK(u.resolution == Resolution::pixel);
  CHECK(u.at(1, 1) == doctest::Approx(0.5));
  CHECK(u.at(0, 0) == 0.0);
  CHECK(u.at(0, 2) == 1.0);
  CHECK(u.at(0, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(dice::upsample_map(x, 0, 3), dice::DataError);
}

TEST_CASE("map helpers") {
  AnomalyMap m(2, 2, Resolution::patch);
  m.values = {0.1, 0.9, 0.9, -0.2};
  CHECK(m.max() == 0.9);
  CHECK(m.min() == -0.2);
  CHECK(m.argmax() == std::pair<std::size_t, std::size_t>{0, 1});
}
