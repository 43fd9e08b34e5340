#include <doctest.h>

#include <cmath>

#include "dice/error.hpp"
#include "dice/preprocess.hpp"
#include "dice/rng.hpp"

using dice::AnomalyMap;
using dice::Resolution;

TEST_CASE("resize keeps the aspect ratio") {
  const auto out = dice::resize_bilinear(dice::ImageTensor(480, 480, 3, 0.3f));
  CHECK(out.height == 240);
  CHECK(out.width == 240);
  for (float v : out.data) CHECK(v == doctest::Approx(0.3f));
  CHECK(dice::resize_bilinear(dice::ImageTensor(100, 150, 3), 240).width == 360);
  CHECK(dice::resize_bilinear(dice::ImageTensor(3, 4, 1), 240).width == 320);
}

TEST_CASE("bilinear checkerboard center") {
  dice::ImageTensor img(2, 2, 1);
  img.data = {0.0f, 1.0f, 1.0f, 0.0f};
  const auto out = dice::resize_bilinear(img, 3);
  CHECK(out.width == 3);
  CHECK(out.at(1, 1) == doctest::Approx(0.5));
  CHECK(out.at(0, 0) == 0.0f);
  CHECK(out.at(2, 0) == 1.0f);
  CHECK_THROWS_AS(dice::resize_bilinear(dice::ImageTensor(0, 0, 3)), dice::DataError);
}

TEST_CASE("channel normalization") {
  dice::ImageTensor img(1, 2, 3);
  img.data = {0.8f, 0.1f, 0.2f, 0.3f, 0.4f, 0.5f};
  const std::array<double, 3> zero{0, 0, 0}, one{1, 1, 1};
  CHECK(dice::normalize_channels(img, zero, one) == img);
  const std::array<double, 3> mean{0.5, 0.5, 0.5}, sd{0.25, 0.25, 0.25};
  CHECK(dice::normalize_channels(img, mean, sd).data[0] == doctest::Approx(1.2));
  dice::ImageTensor at_mean(2, 2, 3);
  for (std::size_t i = 0; i < at_mean.data.size(); ++i) at_mean.data[i] = static_cast<float>(dice::kClipMean[i % 3]);
  for (float v : dice::normalize_channels(at_mean, dice::kClipMean, dice::kClipStd).data) {
    CHECK(std::fabs(v) < 1e-6);
  }
  const auto round = dice::denormalize_channels(dice::normalize_channels(img, dice::kClipMean, dice::kClipStd),
                                                dice::kClipMean, dice::kClipStd);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(round.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));
  const std::array<double, 3> bad{1, 0, 1};
  CHECK_THROWS_AS(dice::normalize_channels(img, mean, bad), dice::DataError);
}

TEST_CASE("mask nearest resize") {
  dice::BinaryMap m(2, 2);
  m.at(0, 1) = 1;
  const auto r = dice::resize_mask_nearest(m, 4, 4);
  CHECK(r.count() == 4);
  CHECK(r.at(0, 3) == 1);
  CHECK(r.at(1, 2) == 1);
  CHECK(r.at(2, 2) == 0);
}

TEST_CASE("tile plans") {
  const auto p360 = dice::plan_tiles(240, 360);
  REQUIRE(p360.tiles.size() == 2);
  CHECK(p360.tiles[0].x_offset == 0);
  CHECK(p360.tiles[1].x_offset == 120);
  CHECK(dice::plan_tiles(240, 240).tiles.size() == 1);
  const auto p480 = dice::plan_tiles(240, 480);
  CHECK(p480.tiles[1].x_offset == 240);
  CHECK_THROWS_AS(dice::plan_tiles(240, 200), dice::DataError);
  CHECK_THROWS_WITH_AS(dice::plan_tiles(240, 481), doctest::Contains("too wide"), dice::DataError);
}

TEST_CASE("tile split") {
  dice::ImageTensor img(240, 360, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 1013);
  const auto t = dice::tile_split(img);
  REQUIRE(t.tiles.size() == 2);
  CHECK(t.tiles[1].at(10, 0, 2) == img.at(10, 120, 2));
  CHECK(t.tiles[0].at(239, 239, 0) == img.at(239, 239, 0));
  CHECK_THROWS_AS(dice::tile_split(dice::ImageTensor(100, 120, 3)), dice::DataError);
}

TEST_CASE("tile merge") {
  const auto plan = dice::plan_tiles(240, 360);
  const auto merged = dice::tile_merge({AnomalyMap(240, 240, Resolution::pixel, 0.0),
                                        AnomalyMap(240, 240, Resolution::pixel, 1.0)},
                                       plan);
  CHECK(merged.at(5, 0) == 0.0);
  CHECK(merged.at(5, 119) == 0.0);
  CHECK(merged.at(5, 120) == 0.5);
  CHECK(merged.at(5, 239) == 0.5);
  CHECK(merged.at(5, 240) == 1.0);
  CHECK(merged.at(5, 359) == 1.0);
  const auto c = dice::tile_merge({AnomalyMap(240, 240, Resolution::pixel, 0.3),
                                   AnomalyMap(240, 240, Resolution::pixel, 0.3)},
                                  plan);
  for (double v : c.values) CHECK(v == 0.3);
  CHECK_THROWS_AS(dice::tile_merge({AnomalyMap(240, 240, Resolution::pixel)}, plan), dice::DataError);
}

TEST_CASE("split then merge reproduces the map") {
  dice::SplitMix64 rng(6);
  for (std::size_t w : {240u, 241u, 300u, 479u, 480u}) {
    const auto plan = dice::plan_tiles(240, w);
    AnomalyMap full(240, w, Resolution::pixel);
    for (auto& v : full.values) v = rng.uniform();
    std::vector<AnomalyMap> parts;
    for (const auto& t : plan.tiles) {
      AnomalyMap p(240, 240, Resolution::pixel);
      for (std::size_t y = 0; y < 240; ++y) {
        for (std::size_t x = 0; x < 240; ++x) p.at(y, x) = full.at(y, x + t.x_offset);
      }
      parts.push_back(p);
    }
    CHECK(dice::tile_merge(parts, plan) == full);
  }
}
