#include "dice/tokens.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dice/dtf.hpp"
#include "dice/error.hpp"

namespace dice {
namespace {

template <typename T>
void normalize_span(std::span<T> v, const char* zero_norm_message) {
  double sq = 0.0;
  for (T x : v) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DataError(zero_norm_message);
  if (std::abs(norm - 1.0) <= kUnitTolerance) return;
  for (T& x : v) x = static_cast<T>(static_cast<double>(x) / norm);
}

void check_finite(const std::vector<float>& values) {
  for (float v : values) {
    if (!std::isfinite(v)) throw DataError("non-finite tokens");
  }
}

}  // namespace

void normalize_in_place(std::span<float> v, const char* zero_norm_message) {
  normalize_span(v, zero_norm_message);
}

void normalize_in_place(std::span<double> v, const char* zero_norm_message) {
  normalize_span(v, zero_norm_message);
}

PatchTokenGrid::PatchTokenGrid(std::size_t h, std::size_t w, std::size_t d,
                               std::vector<float> values)
    : h_(h), w_(w), d_(d), values_(std::move(values)) {
  if (h == 0 || w == 0 || d == 0 || values_.size() != h * w * d) {
    throw DataError("shape mismatch");
  }
  check_finite(values_);
  for (std::size_t i = 0; i < h * w; ++i) {
    normalize_in_place(std::span<float>(values_.data() + i * d, d),
                       "degenerate patch token");
  }
}

ClassToken::ClassToken(std::vector<float> v) : v_(std::move(v)) {
  if (v_.empty()) throw DataError("shape mismatch");
  check_finite(v_);
  normalize_in_place(std::span<float>(v_), "degenerate class token");
}

void FeatureBundle::validate() const {
  if (class_token.dim() != patch_grid.dim()) throw DataError("shape mismatch");
  if (pseudo_patch_grid) {
    const auto& p = *pseudo_patch_grid;
    if (p.height() != patch_grid.height() || p.width() != patch_grid.width() ||
        p.dim() != patch_grid.dim()) {
      throw DataError("shape mismatch");
    }
  }
  if (pseudo_mask && (pseudo_mask->height == 0 || pseudo_mask->width == 0)) {
    throw DataError("shape mismatch");
  }
}

void write_feature_bundle(const FeatureBundle& bundle,
                          const std::string& directory) {
  bundle.validate();
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  fs::create_directories(dir);
  const auto& g = bundle.patch_grid;
  write_dtf({{g.dim()}, {bundle.class_token.values().begin(),
                         bundle.class_token.values().end()}},
            dir / "class.dtf");
  write_dtf({{g.height(), g.width(), g.dim()}, g.values()}, dir / "patch.dtf");
  if (bundle.pseudo_patch_grid) {
    const auto& p = *bundle.pseudo_patch_grid;
    write_dtf({{p.height(), p.width(), p.dim()}, p.values()},
              dir / "pseudo_patch.dtf");
  }
  if (bundle.pseudo_mask) {
    const auto& m = *bundle.pseudo_mask;
    DtfTensor t{{m.height, m.width}, std::vector<float>(m.data.size())};
    for (std::size_t i = 0; i < m.data.size(); ++i) t.values[i] = m.data[i] ? 1.0f : 0.0f;
    write_dtf(t, dir / "pseudo_mask.dtf");
  }
  nlohmann::json meta{{"id", bundle.id}, {"h", g.height()}, {"w", g.width()},
                      {"d", g.dim()}};
  if (bundle.image_height > 0) {
    meta["image_h"] = bundle.image_height;
    meta["image_w"] = bundle.image_width;
  }
  std::ofstream out(dir / "meta.json");
  out << meta.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "meta.json").string());
}

FeatureBundle load_feature_bundle(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path dir(directory);
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw DataError("cannot open " + (dir / "meta.json").string());
  nlohmann::json meta;
  std::size_t h = 0, w = 0, d = 0;
  FeatureBundle b;
  try {
    meta = nlohmann::json::parse(meta_in);
    b.id = meta.at("id").get<std::string>();
    h = meta.at("h").get<std::size_t>();
    w = meta.at("w").get<std::size_t>();
    d = meta.at("d").get<std::size_t>();
    b.image_height = meta.value("image_h", std::size_t{0});
    b.image_width = meta.value("image_w", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid meta.json: ") + e.what());
  }

  const DtfTensor cls = read_dtf(dir / "class.dtf");
  if (cls.dims != std::vector<std::uint64_t>{d}) throw DataError("shape mismatch");
  b.class_token = ClassToken(cls.values);

  auto read_grid = [&](const fs::path& p) {
    DtfTensor t = read_dtf(p);
    if (t.dims != std::vector<std::uint64_t>{h, w, d}) throw DataError("shape mismatch");
    return PatchTokenGrid(h, w, d, std::move(t.values));
  };
  b.patch_grid = read_grid(dir / "patch.dtf");
  if (fs::exists(dir / "pseudo_patch.dtf")) {
    b.pseudo_patch_grid = read_grid(dir / "pseudo_patch.dtf");
  }
  if (fs::exists(dir / "pseudo_mask.dtf")) {
    const DtfTensor t = read_dtf(dir / "pseudo_mask.dtf");
    if (t.dims.size() != 2) throw DataError("shape mismatch");
    BinaryMap m(t.dims[0], t.dims[1]);
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      if (!std::isfinite(t.values[i])) throw DataError("non-finite tokens");
      m.data[i] = t.values[i] > 0.5f ? 1 : 0;
    }
    b.pseudo_mask = std::move(m);
  }
  b.validate();
  return b;
}

}  // namespace dice
