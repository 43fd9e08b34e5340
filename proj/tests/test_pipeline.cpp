#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "dice/dtf.hpp"
#include "dice/error.hpp"
#include "dice/pipeline.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const fs::path p = fs::path(DICE_TEST_TMP) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

dice::RunConfig small_config(const fs::path& manifest, dice::Mode mode) {
  dice::RunConfig c;
  c.manifest_path = manifest.string();
  c.mode = mode;
  c.seeds = {1, 2};
  c.encoder_seed = 1;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("mode names") {
  for (auto m : {dice::Mode::text, dice::Mode::dual, dice::Mode::dual_tta}) {
    CHECK(dice::parse_mode(dice::to_string(m)) == m);
  }
  CHECK_THROWS_AS(dice::parse_mode("fused"), dice::ConfigError);
}

TEST_CASE("pairing with two images") {
  const auto t = dice::pair_assignment(2, 1, 9);
  CHECK(t == std::vector<std::vector<std::size_t>>{{1}, {0}});
}

TEST_CASE("pairing properties") {
  for (std::uint64_t seed : {0u, 1u, 77u}) {
    const auto t = dice::pair_assignment(10, 4, seed);
    REQUIRE(t.size() == 10);
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::set<std::size_t> u(t[i].begin(), t[i].end());
      CHECK(u.size() == 4);
      CHECK(!u.contains(i));
      for (auto r : t[i]) CHECK(r < 10);
    }
    CHECK(dice::pair_assignment(10, 4, seed) == t);
    const auto t1 = dice::pair_assignment(10, 1, seed);
    for (std::size_t i = 0; i < 10; ++i) CHECK(t1[i][0] == t[i][0]);
  }
  CHECK(dice::pair_assignment(10, 3, 1) != dice::pair_assignment(10, 3, 2));
  CHECK_THROWS_AS(dice::pair_assignment(4, 4, 1), dice::DataError);
  CHECK_THROWS_AS(dice::pair_assignment(1, 1, 1), dice::DataError);
  CHECK_THROWS_AS(dice::pair_assignment(4, 0, 1), dice::DataError);
}

TEST_CASE("pairing covers every candidate") {
  std::vector<int> hits(6, 0);
  for (std::uint64_t seed = 0; seed < 600; ++seed) hits[dice::pair_assignment(6, 1, seed)[0][0]]++;
  CHECK(hits[0] == 0);
  for (std::size_t j = 1; j < 6; ++j) CHECK(hits[j] > 80);
}

TEST_CASE("config json round trip") {
  dice::RunConfig c;
  c.mode = dice::Mode::dual;
  c.reference_count = 3;
  c.seeds = {7, 8};
  c.fusion.lambda2 = 0.5;
  c.tau = 0.05;
  c.tta.steps = 4;
  c.synth.threshold = 0.4;
  c.pixel_metrics = false;
  dice::RunConfig d;
  dice::apply_config_json(d, dice::config_to_json(c));
  CHECK(dice::config_to_json(d) == dice::config_to_json(c));
  CHECK(d.mode == dice::Mode::dual);
  CHECK(d.reference_count == 3);

  dice::RunConfig e;
  dice::apply_config_json(e, nlohmann::json{{"k", 2}});
  CHECK(e.reference_count == 2);
  CHECK(e.mode == dice::Mode::dual_tta);
  CHECK_THROWS_AS(dice::apply_config_json(e, nlohmann::json{{"k", "two"}}), dice::ConfigError);
  CHECK_THROWS_AS(dice::apply_config_json(e, nlohmann::json{{"mode", "both"}}), dice::ConfigError);
}

TEST_CASE("config validation") {
  dice::RunConfig c;
  CHECK_NOTHROW(c.validate());
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), dice::ConfigError);
  c = {};
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), dice::ConfigError);
  c = {};
  c.fpr_limit = 1.5;
  CHECK_THROWS_AS(c.validate(), dice::ConfigError);
  c = {};
  c.reference_count = 0;
  CHECK_THROWS_AS(c.validate(), dice::ConfigError);
}

TEST_CASE("manifest validation") {
  dice::DatasetManifest m;
  m.entries = {{"a", "c", "", "a.ppm", "", 0}, {"a", "c", "", "b.ppm", "", 0}};
  CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("duplicate"), dice::DataError);
  m.entries = {{"a", "c", "", "a.ppm", "", 2}};
  CHECK_THROWS_AS(m.validate(), dice::DataError);
  m.entries = {{"a", "c", "f", "a.ppm", "", 0}};
  CHECK_THROWS_AS(m.validate(), dice::DataError);
  m.entries = {{"a", "c", "", "", "", 0}};
  CHECK_THROWS_AS(m.validate(), dice::DataError);

  const auto dir = tmp("manifest");
  std::ofstream(dir / "bad.json") << "{\"entries\": [{\"id\": 1}]}";
  CHECK_THROWS_AS(dice::load_manifest(dir / "bad.json"), dice::DataError);
  CHECK_THROWS_AS(dice::load_manifest(dir / "absent.json"), dice::DataError);
}

TEST_CASE("manifest round trip") {
  const auto dir = tmp("manifest_rt");
  dice::DatasetManifest m;
  m.image_height = 64;
  m.categories["carpet"] = {dice::CategoryKind::surface, "text.dtf"};
  m.entries = {{"x", "carpet", "feat/x", "", "gt/x.pgm", 1}, {"y", "carpet", "", "y.ppm", "", 0}};
  dice::write_manifest(m, dir / "m.json");
  const auto back = dice::load_manifest(dir / "m.json");
  CHECK(dice::manifest_to_json(back) == dice::manifest_to_json(m));
  CHECK(back.resolve("y.ppm") == dir / "y.ppm");
}

TEST_CASE("synthetic fixture") {
  const auto dir = tmp("fixture");
  const auto m = dice::make_synthetic_fixture(3, 8, dir, 64);
  REQUIRE(m.entries.size() == 8);
  int pos = 0;
  for (const auto& e : m.entries) {
    const auto mask = dice::read_mask(dir / e.gt_mask_path);
    CHECK(mask.height == 64);
    if (e.label) {
      ++pos;
      CHECK(mask.count() > 0);
    } else {
      CHECK(mask.count() == 0);
    }
  }
  CHECK(pos == 4);
  const auto again = tmp("fixture_again");
  dice::make_synthetic_fixture(3, 8, again, 64);
  for (const auto& e : m.entries) {
    CHECK(slurp(dir / e.image_path) == slurp(again / e.image_path));
    CHECK(slurp(dir / e.gt_mask_path) == slurp(again / e.gt_mask_path));
  }
  CHECK_THROWS_AS(dice::make_synthetic_fixture(3, 1, dir, 64), dice::ConfigError);
  CHECK_THROWS_AS(dice::make_synthetic_fixture(3, 4, dir, 60), dice::ConfigError);
}

TEST_CASE("evaluation report on the fixture") {
  const auto dir = tmp("eval");
  dice::make_synthetic_fixture(3, 8, dir, 64);
  auto c = small_config(dir / "manifest.json", dice::Mode::dual_tta);
  c.out_path = (dir / "out" / "report.json").string();
  c.heatmap_dir = (dir / "heat").string();
  c.tta_dump_dir = (dir / "dump").string();
  const auto r = dice::run_eval(c);
  CHECK(r["mode"] == "dual_tta");
  CHECK(r["runs"].size() == 2);
  const auto& agg = r["summary"]["aggregate"];
  for (const char* key : {"auroc_image", "auroc_pixel", "aupro", "f1max_pixel"}) {
    CAPTURE(key);
    REQUIRE(agg[key].is_object());
    CHECK(agg[key]["n"] == 2);
    const double m = agg[key]["mean"];
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);
    const double a = r["runs"][0]["aggregate"][key], b = r["runs"][1]["aggregate"][key];
    CHECK(m == doctest::Approx((a + b) / 2));
    CHECK(agg[key]["std"].get<double>() == doctest::Approx(std::fabs(a - b) / std::sqrt(2.0)));
  }
  CHECK(r["runs"][0].contains("pairing"));
  CHECK(r["runs"][0]["opacity_draws"].size() == 8);
  CHECK(fs::exists(c.out_path));
  CHECK(fs::exists(dir / "heat" / "img_0000.pgm"));
  CHECK(fs::exists(dir / "heat" / "img_0000.json"));
  CHECK(fs::exists(dir / "dump" / "seed1" / "img_0001" / "tile0_weight.dtf"));
  const auto w = dice::read_dtf(dir / "dump" / "seed1" / "img_0001" / "tile0_weight.dtf");
  CHECK(w.dims == std::vector<std::uint64_t>{c.encoder.dim, c.encoder.dim});
}

TEST_CASE("zero steps matches the bypass") {
  const auto dir = tmp("identity");
  dice::make_synthetic_fixture(4, 6, dir, 64);
  auto a = small_config(dir / "manifest.json", dice::Mode::dual_tta);
  a.tta.steps = 0;
  auto b = a;
  b.tta_bypass = true;
  const auto ra = dice::run_eval(a), rb = dice::run_eval(b);
  CHECK(ra["summary"] == rb["summary"]);
}

TEST_CASE("text mode ignores the seed") {
  const auto dir = tmp("text");
  dice::make_synthetic_fixture(5, 6, dir, 64);
  auto c = small_config(dir / "manifest.json", dice::Mode::text);
  const auto r = dice::run_eval(c);
  CHECK(r["runs"][0]["categories"] == r["runs"][1]["categories"]);
  CHECK(r["summary"]["aggregate"]["auroc_pixel"]["std"] == 0.0);
  CHECK(!r["runs"][0].contains("pairing"));
}

TEST_CASE("dual mode beats text on the fixture") {
  // Checked once for this fixture seed and encoder seed.
  const auto dir = tmp("ordering");
  dice::make_synthetic_fixture(0, 16, dir, 64);
  const auto text = dice::run_eval(small_config(dir / "manifest.json", dice::Mode::text));
  const auto dual = dice::run_eval(small_config(dir / "manifest.json", dice::Mode::dual));
  const double t = text["summary"]["aggregate"]["auroc_pixel"]["mean"];
  const double d = dual["summary"]["aggregate"]["auroc_pixel"]["mean"];
  CAPTURE(t);
  CAPTURE(d);
  CHECK(d >= t);
}

TEST_CASE("metrics are null when a class is missing") {
  const auto dir = tmp("one_class");
  auto m = dice::make_synthetic_fixture(6, 4, dir, 64);
  m.entries.erase(std::remove_if(m.entries.begin(), m.entries.end(),
                                 [](const dice::ManifestEntry& e) { return e.label == 1; }),
                  m.entries.end());
  dice::write_manifest(m, dir / "normals.json");
  auto c = small_config(dir / "normals.json", dice::Mode::dual);
  const auto r = dice::run_eval(c);
  CHECK(r["runs"][0]["categories"]["widget"]["auroc_image"].is_null());
  CHECK(r["summary"]["aggregate"]["auroc_image"].is_null());
}

TEST_CASE("anomalous entry without a mask") {
  const auto dir = tmp("no_mask");
  auto m = dice::make_synthetic_fixture(6, 4, dir, 64);
  m.entries[1].gt_mask_path.clear();
  dice::write_manifest(m, dir / "m.json");
  auto c = small_config(dir / "m.json", dice::Mode::dual);
  CHECK_THROWS_WITH_AS(dice::run_eval(c), doctest::Contains("missing ground-truth mask"), dice::DataError);
  c.pixel_metrics = false;
  CHECK_NOTHROW(dice::run_eval(c));
}

TEST_CASE("heatmap quantization") {
  dice::AnomalyMap flat(2, 3, dice::Resolution::pixel, 0.7);
  dice::HeatmapBounds b;
  const auto q = dice::quantize_heatmap(flat, b);
  CHECK(b.degenerate);
  for (auto v : q) CHECK(v == 128);

  dice::AnomalyMap ramp(1, 3, dice::Resolution::pixel);
  ramp.values = {2.0, 2.5, 3.0};
  const auto r = dice::quantize_heatmap(ramp, b);
  CHECK(!b.degenerate);
  CHECK(r == std::vector<std::uint8_t>{0, 128, 255});

  const auto dir = tmp("heatmap");
  const auto bounds = dice::emit_heatmap(ramp, dir / "h.pgm");
  CHECK(bounds.min == 2.0);
  CHECK(bounds.max == 3.0);
  const auto img = dice::read_netpbm(dir / "h.pgm");
  CHECK(img.width == 3);
  CHECK(img.data[2] == 1.0f);
  std::ifstream side(dir / "h.json");
  const auto j = nlohmann::json::parse(side);
  CHECK(j["degenerate"] == false);
  CHECK(j["max"] == 3.0);
}

TEST_CASE("file-backed features") {
  const auto dir = tmp("features");
  dice::SplitMix64 rng(21);
  const std::size_t d = 8;
  dice::DatasetManifest m;
  m.categories["tile"] = {dice::CategoryKind::surface, "text.dtf"};
  for (int i = 0; i < 4; ++i) {
    dice::FeatureBundle b;
    b.id = "f" + std::to_string(i);
    b.class_token = dice::ClassToken(oracle::random_vector(rng, d));
    b.patch_grid = oracle::random_grid(rng, 3, 3, d);
    b.pseudo_patch_grid = oracle::random_grid(rng, 3, 3, d);
    b.pseudo_mask = dice::BinaryMap(6, 6);
    b.pseudo_mask->at(0, 0) = 1;
    dice::write_feature_bundle(b, (dir / b.id).string());
    dice::BinaryMap gt(48, 48);
    if (i % 2) gt.at(5, 5) = 1;
    dice::write_mask(gt, dir / (b.id + ".pgm"));
    m.entries.push_back({b.id, "tile", b.id, "", b.id + ".pgm", i % 2});
  }
  std::vector<float> text;
  for (int r = 0; r < 4; ++r) {
    const auto v = oracle::random_vector(rng, d);
    text.insert(text.end(), v.begin(), v.end());
  }
  dice::write_dtf({{4, d}, text}, dir / "text.dtf");
  dice::write_manifest(m, dir / "m.json");

  auto c = small_config(dir / "m.json", dice::Mode::dual_tta);
  const auto r = dice::run_eval(c);
  CHECK(r["summary"]["aggregate"]["auroc_pixel"].is_object());

  const auto loaded = dice::load_dataset(c, dice::load_manifest(dir / "m.json"));
  CHECK(loaded.images[0].pixel_height == 48);
  CHECK(!loaded.encoder.has_value());
  const auto p = dice::pseudo_inputs(loaded, 1, 0, 1, c);
  CHECK(p.mask_patch.height == 3);
  CHECK(p.mask_patch.at(0, 0) == 1);
  CHECK(p.mask_patch.count() == 1);

  dice::write_dtf({{3, d}, std::vector<float>(3 * d, 0.5f)}, dir / "text.dtf");
  CHECK_THROWS_WITH_AS(dice::run_eval(c), doctest::Contains("shape mismatch"), dice::DataError);
  dice::write_dtf({{4, d}, text}, dir / "text.dtf");

  auto plain = dice::load_feature_bundle((dir / "f1").string());
  plain.pseudo_patch_grid.reset();
  plain.pseudo_mask.reset();
  fs::remove_all(dir / "f1");
  dice::write_feature_bundle(plain, (dir / "f1").string());
  CHECK_THROWS_WITH_AS(dice::run_eval(c), doctest::Contains("missing pseudo features"), dice::DataError);
  c.mode = dice::Mode::dual;
  CHECK_NOTHROW(dice::run_eval(c));
}
