#include "dice/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "dice/dtf.hpp"
#include "dice/error.hpp"
#include "dice/metrics.hpp"
#include "dice/rng.hpp"
#include "dice/simd.hpp"

namespace dice {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kMetricNames[] = {"auroc_image", "f1max_image", "ap_image",
                                        "auroc_pixel", "f1max_pixel", "aupro"};

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
// thrown by any job is rethrown after all workers stop.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i; !failed && (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          failed = true;
        }
      }
    });
  }
  workers.clear();
  if (error) std::rethrow_exception(error);
}

ImageTensor to_rgb(const ImageTensor& img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw DataError("unsupported channel count");
  ImageTensor out(img.height, img.width, 3);
  for (std::size_t i = 0; i < img.height * img.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] = img.data[i];
  }
  return out;
}

ImageTensor clip_normalize(const ImageTensor& img) {
  return normalize_channels(img, kClipMean, kClipStd);
}

// Nearest resample of a texture to exact dims.
ImageTensor fit_texture(const ImageTensor& tex, std::size_t h, std::size_t w) {
  ImageTensor out(h, w, tex.channels);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t sy = y * tex.height / h;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sx = x * tex.width / w;
      for (std::size_t c = 0; c < tex.channels; ++c) out.at(y, x, c) = tex.at(sy, sx, c);
    }
  }
  return out;
}

std::size_t effective_height(const RunConfig& config, const DatasetManifest& manifest) {
  if (config.image_height) return config.image_height;
  if (manifest.image_height) return manifest.image_height;
  return 240;
}

std::string prompt_class_name(std::string category) {
  std::replace(category.begin(), category.end(), '_', ' ');
  return category;
}

TextTokenPair text_tokens_for(const std::string& category, const CategoryInfo& info,
                              const DatasetManifest& manifest, std::size_t dim,
                              const RunConfig& config) {
  std::vector<std::vector<float>> normal, anomalous;
  if (!info.text_embeddings.empty()) {
    const DtfTensor t = read_dtf(manifest.resolve(info.text_embeddings));
    if (t.dims.size() != 2 || t.dims[0] < 2 || t.dims[0] % 2 != 0 || t.dims[1] != dim) {
      throw DataError("shape mismatch in text embeddings for " + category);
    }
    const std::size_t rows = t.dims[0];
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<float> row(t.values.begin() + static_cast<long>(r * dim),
                             t.values.begin() + static_cast<long>((r + 1) * dim));
      (r < rows / 2 ? normal : anomalous).push_back(std::move(row));
    }
  } else {
    const PromptSet prompts = expand_templates(prompt_class_name(category), info.kind);
    for (const auto& p : prompts.normal_prompts) {
      normal.push_back(toy_text_embedding(p, dim, config.encoder_seed));
    }
    for (const auto& p : prompts.anomalous_prompts) {
      anomalous.push_back(toy_text_embedding(p, dim, config.encoder_seed));
    }
  }
  return aggregate_text_tokens(normal, anomalous, config.tau);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for a single value.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

json mean_std(const std::vector<double>& v) {
  if (v.empty()) return nullptr;
  return {{"mean", mean_of(v)}, {"std", std_of(v)}, {"n", v.size()}};
}

json category_metrics(const Dataset& data, const std::vector<std::size_t>& members,
                      const std::vector<ImageScores>& scores, const RunConfig& config) {
  json m;
  for (const char* name : kMetricNames) m[name] = nullptr;

  ScoredSet image_set;
  for (std::size_t idx : members) {
    image_set.scores.push_back(scores[idx].classification);
    image_set.labels.push_back(static_cast<std::uint8_t>(data.images[idx].label));
  }
  const auto positives = static_cast<std::size_t>(
      std::count(image_set.labels.begin(), image_set.labels.end(), 1));
  if (positives > 0 && positives < image_set.labels.size()) {
    m["auroc_image"] = auroc(image_set);
    m["f1max_image"] = f1_max(image_set);
    m["ap_image"] = average_precision(image_set);
  }

  if (!config.pixel_metrics) return m;
  std::vector<AnomalyMap> maps;
  std::vector<BinaryMap> gts;
  ScoredSet pixel_set;
  for (std::size_t idx : members) {
    const EncodedImage& img = data.images[idx];
    const AnomalyMap& map = scores[idx].pixel_map;
    BinaryMap gt = img.gt ? *img.gt : BinaryMap(img.pixel_height, img.pixel_width);
    pixel_set.scores.insert(pixel_set.scores.end(), map.values.begin(), map.values.end());
    pixel_set.labels.insert(pixel_set.labels.end(), gt.data.begin(), gt.data.end());
    maps.push_back(map);
    gts.push_back(std::move(gt));
  }
  const auto pixel_pos = static_cast<std::size_t>(
      std::count(pixel_set.labels.begin(), pixel_set.labels.end(), 1));
  if (pixel_pos > 0 && pixel_pos < pixel_set.labels.size()) {
    m["auroc_pixel"] = auroc(pixel_set);
    m["f1max_pixel"] = f1_max(pixel_set);
    m["aupro"] = aupro(maps, gts, config.fpr_limit);
  }
  return m;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void dump_fit(const TtaFit& fit, const fs::path& dir, std::size_t tile) {
  fs::create_directories(dir);
  const std::string stem = "tile" + std::to_string(tile);
  const auto d = static_cast<std::uint64_t>(fit.adapter.dim());
  write_dtf({{d, d}, {fit.adapter.weight.data.begin(), fit.adapter.weight.data.end()}},
            dir / (stem + "_weight.dtf"));
  write_dtf({{d}, {fit.adapter.bias.begin(), fit.adapter.bias.end()}},
            dir / (stem + "_bias.dtf"));
  std::ofstream out(dir / (stem + "_losses.json"));
  out << json{{"losses", fit.losses}, {"steps", fit.adapter.step_count}}.dump(2) << "\n";
}

}  // namespace

Mode parse_mode(const std::string& name) {
  if (name == "text") return Mode::text;
  if (name == "dual") return Mode::dual;
  if (name == "dual_tta") return Mode::dual_tta;
  throw ConfigError("unknown mode: " + name);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::text:
      return "text";
    case Mode::dual:
      return "dual";
    case Mode::dual_tta:
      return "dual_tta";
  }
  return "?";
}

void RunConfig::validate() const {
  fusion.validate();
  tta.validate();
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (reference_count < 1) throw ConfigError("k must be >= 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("fpr limit must be in (0, 1]");
  if (synth.threshold < 0.0 || synth.threshold > 1.0) {
    throw ConfigError("synth threshold must be in [0, 1]");
  }
  if (!(synth.opacity_min > 0.0 && synth.opacity_min <= synth.opacity_max &&
        synth.opacity_max <= 1.0)) {
    throw ConfigError("synth opacity range must satisfy 0 < min <= max <= 1");
  }
  if (synth.base_res == 0 || synth.octaves == 0) throw ConfigError("invalid synth noise settings");
  if (encoder.patch_size == 0 || encoder.dim == 0) throw ConfigError("invalid encoder settings");
}

void apply_config_json(RunConfig& c, const json& j) {
  try {
    if (j.contains("manifest")) c.manifest_path = j["manifest"].get<std::string>();
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("k")) c.reference_count = j["k"].get<std::size_t>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("lambda1")) c.fusion.lambda1 = j["lambda1"].get<double>();
    if (j.contains("lambda2")) c.fusion.lambda2 = j["lambda2"].get<double>();
    if (j.contains("lambda3")) c.fusion.lambda3 = j["lambda3"].get<double>();
    if (j.contains("lambda4")) c.fusion.lambda4 = j["lambda4"].get<double>();
    if (j.contains("lambda5")) c.fusion.lambda5 = j["lambda5"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("steps")) c.tta.steps = j["steps"].get<std::size_t>();
    if (j.contains("lr")) c.tta.learning_rate = j["lr"].get<double>();
    if (j.contains("beta")) c.tta.beta_sim = j["beta"].get<double>();
    if (j.contains("weight_decay")) c.tta.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("adam_beta1")) c.tta.adam_beta1 = j["adam_beta1"].get<double>();
    if (j.contains("adam_beta2")) c.tta.adam_beta2 = j["adam_beta2"].get<double>();
    if (j.contains("adam_eps")) c.tta.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("literal_sim")) {
      c.tta.similarity = j["literal_sim"].get<bool>() ? SimilarityLoss::literal_cosine
                                                      : SimilarityLoss::one_minus_cosine;
    }
    if (j.contains("encoder_seed")) c.encoder_seed = j["encoder_seed"].get<std::uint64_t>();
    if (j.contains("image_height")) c.image_height = j["image_height"].get<std::size_t>();
    if (j.contains("fpr_limit")) c.fpr_limit = j["fpr_limit"].get<double>();
    if (j.contains("pixel_metrics")) c.pixel_metrics = j["pixel_metrics"].get<bool>();
    if (j.contains("tta_bypass")) c.tta_bypass = j["tta_bypass"].get<bool>();
    if (j.contains("out")) c.out_path = j["out"].get<std::string>();
    if (j.contains("heatmaps")) c.heatmap_dir = j["heatmaps"].get<std::string>();
    if (j.contains("texture_dir")) c.texture_dir = j["texture_dir"].get<std::string>();
    if (j.contains("tta_dump")) c.tta_dump_dir = j["tta_dump"].get<std::string>();
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
    if (j.contains("synth")) {
      const json& s = j["synth"];
      if (s.contains("base_res")) c.synth.base_res = s["base_res"].get<std::size_t>();
      if (s.contains("octaves")) c.synth.octaves = s["octaves"].get<std::size_t>();
      if (s.contains("threshold")) c.synth.threshold = s["threshold"].get<double>();
      if (s.contains("opacity_min")) c.synth.opacity_min = s["opacity_min"].get<double>();
      if (s.contains("opacity_max")) c.synth.opacity_max = s["opacity_max"].get<double>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

json config_to_json(const RunConfig& c) {
  return {
      {"manifest", c.manifest_path},
      {"mode", to_string(c.mode)},
      {"k", c.reference_count},
      {"seeds", c.seeds},
      {"lambda1", c.fusion.lambda1},
      {"lambda2", c.fusion.lambda2},
      {"lambda3", c.fusion.lambda3},
      {"lambda4", c.fusion.lambda4},
      {"lambda5", c.fusion.lambda5},
      {"tau", c.tau},
      {"steps", c.tta.steps},
      {"lr", c.tta.learning_rate},
      {"beta", c.tta.beta_sim},
      {"weight_decay", c.tta.weight_decay},
      {"adam_beta1", c.tta.adam_beta1},
      {"adam_beta2", c.tta.adam_beta2},
      {"adam_eps", c.tta.adam_eps},
      {"literal_sim", c.tta.similarity == SimilarityLoss::literal_cosine},
      {"encoder_seed", c.encoder_seed},
      {"encoder", {{"patch_size", c.encoder.patch_size},
                   {"dim", c.encoder.dim},
                   {"layers", c.encoder.layers}}},
      {"image_height", c.image_height},
      {"fpr_limit", c.fpr_limit},
      {"pixel_metrics", c.pixel_metrics},
      {"tta_bypass", c.tta_bypass},
      {"normalization", {{"mean", kClipMean}, {"std", kClipStd}}},
      {"synth", {{"base_res", c.synth.base_res},
                 {"octaves", c.synth.octaves},
                 {"threshold", c.synth.threshold},
                 {"opacity_min", c.synth.opacity_min},
                 {"opacity_max", c.synth.opacity_max}}},
  };
}

fs::path DatasetManifest::resolve(const std::string& p) const {
  const fs::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw DataError("manifest entry without id");
    if (!ids.insert(e.id).second) throw DataError("duplicate manifest id: " + e.id);
    if (e.label != 0 && e.label != 1) throw DataError("label must be 0 or 1: " + e.id);
    if (e.feature_dir.empty() == e.image_path.empty()) {
      throw DataError("entry needs exactly one of feature_dir / image_path: " + e.id);
    }
  }
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  try {
    const json j = json::parse(in);
    m.image_height = j.value("image_height", std::size_t{0});
    if (j.contains("categories")) {
      for (const auto& [name, info] : j["categories"].items()) {
        CategoryInfo ci;
        ci.kind = default_category_kind(name);
        if (info.contains("kind")) {
          const auto kind = info["kind"].get<std::string>();
          if (kind != "surface" && kind != "object") throw DataError("unknown category kind: " + kind);
          ci.kind = kind == "surface" ? CategoryKind::surface : CategoryKind::object;
        }
        ci.text_embeddings = info.value("text_embeddings", std::string{});
        m.categories[name] = ci;
      }
    }
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.category = e.at("category").get<std::string>();
      entry.feature_dir = e.value("feature_dir", std::string{});
      entry.image_path = e.value("image_path", std::string{});
      entry.gt_mask_path = e.value("gt_mask_path", std::string{});
      entry.label = e.at("label").get<int>();
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid manifest: ") + e.what());
  }
  m.validate();
  return m;
}

json manifest_to_json(const DatasetManifest& m) {
  json j;
  if (m.image_height) j["image_height"] = m.image_height;
  json cats = json::object();
  for (const auto& [name, info] : m.categories) {
    json c{{"kind", info.kind == CategoryKind::surface ? "surface" : "object"}};
    if (!info.text_embeddings.empty()) c["text_embeddings"] = info.text_embeddings;
    cats[name] = c;
  }
  j["categories"] = cats;
  json entries = json::array();
  for (const auto& e : m.entries) {
    json x{{"id", e.id}, {"category", e.category}, {"label", e.label}};
    if (!e.feature_dir.empty()) x["feature_dir"] = e.feature_dir;
    if (!e.image_path.empty()) x["image_path"] = e.image_path;
    if (!e.gt_mask_path.empty()) x["gt_mask_path"] = e.gt_mask_path;
    entries.push_back(x);
  }
  j["entries"] = entries;
  return j;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << manifest_to_json(manifest).dump(2) << "\n";
}

std::vector<std::vector<std::size_t>> pair_assignment(std::size_t n, std::size_t k,
                                                      std::uint64_t seed) {
  if (n < 2) throw DataError("pairing needs at least 2 images");
  if (k == 0 || k > n - 1) throw DataError("k must be in [1, n-1]");
  std::vector<std::vector<std::size_t>> table(n);
  std::vector<std::size_t> pool(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    // Candidates are every index except i; partial Fisher-Yates picks k. Each
    // row has its own stream, so the first k picks do not depend on k.
    SplitMix64 rng(mix_seed(seed, i));
    for (std::size_t c = 0, v = 0; v < n; ++v) {
      if (v != i) pool[c++] = v;
    }
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t pick = j + static_cast<std::size_t>(rng.below(pool.size() - j));
      std::swap(pool[j], pool[pick]);
    }
    table[i].assign(pool.begin(), pool.begin() + static_cast<long>(k));
  }
  return table;
}

Dataset load_dataset(const RunConfig& config, const DatasetManifest& manifest) {
  config.validate();
  manifest.validate();
  if (manifest.entries.empty()) throw DataError("manifest has no entries");
  Dataset data;
  const std::size_t height = effective_height(config, manifest);
  const bool any_image = std::any_of(manifest.entries.begin(), manifest.entries.end(),
                                     [](const ManifestEntry& e) { return !e.image_path.empty(); });
  if (any_image) {
    if (height % config.encoder.patch_size != 0) {
      throw ConfigError("image height must be a multiple of the patch size");
    }
    data.encoder.emplace(config.encoder_seed, config.encoder);
  }
  if (!config.texture_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(config.texture_dir)) {
      if (f.path().extension() == ".ppm" || f.path().extension() == ".pgm") files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) data.textures.push_back(to_rgb(read_netpbm(f)));
    if (data.textures.empty()) throw DataError("no .ppm/.pgm textures in " + config.texture_dir);
  }

  data.images.resize(manifest.entries.size());
  parallel_for(manifest.entries.size(), config.threads, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    EncodedImage& img = data.images[i];
    img.id = e.id;
    img.category = e.category;
    img.label = e.label;
    if (!e.feature_dir.empty()) {
      img.tiles.push_back(load_feature_bundle(manifest.resolve(e.feature_dir).string()));
      const FeatureBundle& b = img.tiles.front();
      img.pixel_height = b.image_height ? b.image_height
                                        : b.patch_grid.height() * config.encoder.patch_size;
      img.pixel_width = b.image_width ? b.image_width
                                      : b.patch_grid.width() * config.encoder.patch_size;
    } else {
      const ImageTensor resized =
          resize_bilinear(to_rgb(read_netpbm(manifest.resolve(e.image_path))), height);
      TiledImage tiled = tile_split(resized, height);
      img.plan = tiled.plan;
      img.pixel_height = resized.height;
      img.pixel_width = resized.width;
      for (auto& tile : tiled.tiles) {
        img.tiles.push_back(data.encoder->encode(clip_normalize(tile), e.id));
        img.tile_pixels.push_back(std::move(tile));
      }
    }
    if (!e.gt_mask_path.empty()) {
      img.gt = resize_mask_nearest(read_mask(manifest.resolve(e.gt_mask_path)),
                                   img.pixel_height, img.pixel_width);
    } else if (e.label == 1 && config.pixel_metrics) {
      throw DataError("missing ground-truth mask for anomalous entry " + e.id);
    }
  });

  for (std::size_t i = 0; i < data.images.size(); ++i) {
    data.by_category[data.images[i].category].push_back(i);
  }
  for (const auto& [category, members] : data.by_category) {
    const std::size_t dim = data.images[members.front()].tiles.front().patch_grid.dim();
    for (std::size_t idx : members) {
      for (const auto& t : data.images[idx].tiles) {
        if (t.patch_grid.dim() != dim) throw DataError("shape mismatch across category " + category);
      }
    }
    CategoryInfo info;
    info.kind = default_category_kind(category);
    if (auto it = manifest.categories.find(category); it != manifest.categories.end()) {
      info = it->second;
    }
    data.text[category] = text_tokens_for(category, info, manifest, dim, config);
  }
  return data;
}

PseudoInputs pseudo_inputs(const Dataset& data, std::size_t image, std::size_t tile,
                           std::uint64_t seed, const RunConfig& config) {
  const EncodedImage& img = data.images[image];
  const PatchTokenGrid& grid = img.tiles[tile].patch_grid;
  if (!img.tile_pixels.empty()) {
    const std::uint64_t s = mix_seed(seed, fnv1a(img.id) + tile);
    const ImageTensor& pixels = img.tile_pixels[tile];
    std::optional<ImageTensor> texture;
    if (!data.textures.empty()) {
      SplitMix64 pick(s ^ 0x7E7u);
      texture = fit_texture(data.textures[pick.below(data.textures.size())], pixels.height,
                            pixels.width);
    }
    SynthConfig synth = config.synth;
    synth.patch_size = config.encoder.patch_size;
    const PseudoSample sample =
        make_pseudo_sample(pixels, s, synth, texture ? &*texture : nullptr);
    return {data.encoder->encode(clip_normalize(sample.image)).patch_grid, sample.mask_patch,
            sample.opacity};
  }
  const FeatureBundle& b = img.tiles[tile];
  if (!b.pseudo_patch_grid || !b.pseudo_mask) {
    throw DataError("missing pseudo features for " + img.id +
                    " (run `dice synth` and export pseudo bundles first)");
  }
  BinaryMap mask = *b.pseudo_mask;
  if (mask.height != grid.height() || mask.width != grid.width()) {
    if (mask.height % grid.height() != 0 || mask.width % grid.width() != 0 ||
        mask.height / grid.height() != mask.width / grid.width()) {
      throw DataError("shape mismatch in pseudo mask for " + img.id);
    }
    mask = max_pool_mask(mask, mask.height / grid.height());
  }
  return {*b.pseudo_patch_grid, std::move(mask), 0.0};
}

ImageScores score_image(const Dataset& data, std::size_t image,
                        const std::vector<std::size_t>& references, std::uint64_t seed,
                        const RunConfig& config) {
  const EncodedImage& img = data.images[image];
  const TextTokenPair& text = data.text.at(img.category);
  std::vector<const PatchTokenGrid*> ref_grids;
  for (std::size_t r : references) {
    for (const auto& t : data.images[r].tiles) ref_grids.push_back(&t.patch_grid);
  }

  ImageScores out;
  std::vector<AnomalyMap> pixel_tiles;
  double class_sum = 0.0, max_visual = 0.0, max_adapted = 0.0;
  for (std::size_t t = 0; t < img.tiles.size(); ++t) {
    const FeatureBundle& bundle = img.tiles[t];
    TileScores ts;
    ts.language = language_map(bundle.patch_grid, text);
    ts.class_score = language_score(bundle.class_token, text);
    AnomalyMap fused;
    if (config.mode == Mode::text) {
      fused = ts.language;
    } else {
      ts.visual = visual_reference_map(bundle.patch_grid, ref_grids);
      if (config.mode == Mode::dual) {
        fused = joint_map(ts.visual, ts.language);
      } else {
        if (config.tta_bypass) {
          ts.adapted = ts.language;
        } else {
          const PseudoInputs pseudo = pseudo_inputs(data, image, t, seed, config);
          const AnomalyMap joint = joint_map(ts.visual, ts.language);
          const TtaProblem problem{&bundle.patch_grid, &pseudo.grid, &pseudo.mask_patch, &text,
                                   &joint};
          ts.fit = tta_fit(problem, config.tta);
          ts.adapted = tta_score_map(adapt_tokens(ts.fit->adapter, bundle.patch_grid), text);
          ts.opacity = pseudo.opacity;
        }
        fused = fuse_localization(ts.visual, ts.adapted, config.fusion);
        max_adapted = t == 0 ? ts.adapted.max() : std::max(max_adapted, ts.adapted.max());
      }
      max_visual = t == 0 ? ts.visual.max() : std::max(max_visual, ts.visual.max());
    }
    class_sum += ts.class_score;
    if (img.plan.tiles.empty()) {
      pixel_tiles.push_back(upsample_map(fused, img.pixel_height, img.pixel_width));
    } else {
      const std::size_t side = img.plan.tiles[t].side;
      pixel_tiles.push_back(upsample_map(fused, side, side));
    }
    out.tiles.push_back(std::move(ts));
  }

  out.pixel_map = img.plan.tiles.empty() ? std::move(pixel_tiles.front())
                                         : tile_merge(pixel_tiles, img.plan);
  const double a_cls = class_sum / static_cast<double>(img.tiles.size());
  const FusionWeights& w = config.fusion;
  switch (config.mode) {
    case Mode::text:
      out.classification = a_cls;
      break;
    case Mode::dual:
      out.classification = w.lambda3 * a_cls + w.lambda4 * max_visual;
      break;
    case Mode::dual_tta:
      out.classification = w.lambda3 * a_cls + w.lambda4 * max_visual + w.lambda5 * max_adapted;
      break;
  }
  return out;
}

json run_eval(const RunConfig& config, const Dataset& data) {
  config.validate();
  const bool needs_pairs = config.mode != Mode::text;
  const std::size_t n = data.images.size();

  json runs = json::array();
  json heatmaps = json::object();
  std::map<std::string, std::map<std::string, std::vector<double>>> per_category;
  std::map<std::string, std::vector<double>> aggregate;
  std::vector<ImageScores> text_cache;

  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    const std::uint64_t seed = config.seeds[s];
    std::vector<std::vector<std::size_t>> refs(n);
    json pairing = json::object();
    if (needs_pairs) {
      for (const auto& [category, members] : data.by_category) {
        if (members.size() < 2) {
          throw DataError("category " + category + " needs at least 2 images for pairing");
        }
        if (config.reference_count > members.size() - 1) {
          throw DataError("k exceeds the images available in category " + category);
        }
        const auto table = pair_assignment(members.size(), config.reference_count,
                                           mix_seed(seed, fnv1a(category)));
        json rows = json::object();
        for (std::size_t i = 0; i < members.size(); ++i) {
          json ids = json::array();
          for (std::size_t r : table[i]) {
            refs[members[i]].push_back(members[r]);
            ids.push_back(data.images[members[r]].id);
          }
          rows[data.images[members[i]].id] = ids;
        }
        pairing[category] = rows;
      }
    }

    std::vector<ImageScores> scores;
    if (config.mode == Mode::text && !text_cache.empty()) {
      scores = text_cache;
    } else {
      scores.resize(n);
      parallel_for(n, config.threads, [&](std::size_t i) {
        scores[i] = score_image(data, i, refs[i], seed, config);
      });
      if (config.mode == Mode::text) text_cache = scores;
    }

    json categories = json::object();
    std::map<std::string, std::vector<double>> seed_means;
    for (const auto& [category, members] : data.by_category) {
      const json m = category_metrics(data, members, scores, config);
      categories[category] = m;
      for (const char* name : kMetricNames) {
        if (m[name].is_null()) continue;
        per_category[category][name].push_back(m[name].get<double>());
        seed_means[name].push_back(m[name].get<double>());
      }
    }
    json seed_aggregate = json::object();
    for (const char* name : kMetricNames) {
      if (seed_means[name].empty()) {
        seed_aggregate[name] = nullptr;
        continue;
      }
      const double v = mean_of(seed_means[name]);
      seed_aggregate[name] = v;
      aggregate[name].push_back(v);
    }

    json run{{"seed", seed}, {"categories", categories}, {"aggregate", seed_aggregate}};
    if (needs_pairs) run["pairing"] = pairing;
    if (config.mode == Mode::dual_tta && !config.tta_bypass) {
      json draws = json::object();
      for (std::size_t i = 0; i < n; ++i) {
        json per_tile = json::array();
        for (const auto& t : scores[i].tiles) per_tile.push_back(t.opacity);
        draws[data.images[i].id] = per_tile;
      }
      run["opacity_draws"] = draws;
      if (!config.tta_dump_dir.empty()) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t t = 0; t < scores[i].tiles.size(); ++t) {
            dump_fit(*scores[i].tiles[t].fit,
                     fs::path(config.tta_dump_dir) / ("seed" + std::to_string(seed)) /
                         data.images[i].id,
                     t);
          }
        }
      }
    }
    runs.push_back(run);

    if (s == 0 && !config.heatmap_dir.empty()) {
      fs::create_directories(config.heatmap_dir);
      for (std::size_t i = 0; i < n; ++i) {
        const std::string file = data.images[i].id + ".pgm";
        const HeatmapBounds b = emit_heatmap(scores[i].pixel_map, fs::path(config.heatmap_dir) / file);
        heatmaps[data.images[i].id] = {
            {"file", file}, {"min", b.min}, {"max", b.max}, {"degenerate", b.degenerate}};
      }
    }
  }

  json summary_categories = json::object();
  for (const auto& [category, members] : data.by_category) {
    json m = json::object();
    for (const char* name : kMetricNames) m[name] = mean_std(per_category[category][name]);
    summary_categories[category] = m;
  }
  json summary_aggregate = json::object();
  for (const char* name : kMetricNames) summary_aggregate[name] = mean_std(aggregate[name]);

  json report{
      {"tool", "dice"},
      {"timestamp", utc_timestamp()},
      {"mode", to_string(config.mode)},
      {"config", config_to_json(config)},
      {"interpretation",
       {{"classification_language_term", "A^L_det read as A^L_cls (class-token language score)"},
        {"fusion_resolution", "patch (fused before upsampling)"},
        {"pairing_reused_across_modes", true},
        {"pseudo_loss_gradient", "full gradient through both softmax branches"},
        {"pseudo_sample", "one fixed pseudo sample per image per fit"},
        {"similarity_loss", config.tta.similarity == SimilarityLoss::one_minus_cosine
                                ? "1 - cosine" : "cosine (literal)"},
        {"std", "sample standard deviation across seeds"}}},
      {"simd", simd::kernels().name},
      {"seeds", config.seeds},
      {"runs", runs},
      {"summary", {{"categories", summary_categories}, {"aggregate", summary_aggregate}}},
  };
  if (!config.heatmap_dir.empty()) report["heatmaps"] = heatmaps;

  if (!config.out_path.empty()) {
    const fs::path out(config.out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + config.out_path);
    f << report.dump(2) << "\n";
    if (!f) throw DataError("cannot write " + config.out_path);
  }
  return report;
}

json run_eval(const RunConfig& config) {
  config.validate();
  const DatasetManifest manifest = load_manifest(config.manifest_path);
  const Dataset data = load_dataset(config, manifest);
  return run_eval(config, data);
}

std::vector<std::uint8_t> quantize_heatmap(const AnomalyMap& map, HeatmapBounds& bounds) {
  bounds.min = map.min();
  bounds.max = map.max();
  bounds.degenerate = !(bounds.max > bounds.min);
  std::vector<std::uint8_t> bytes(map.size(), 128);
  if (bounds.degenerate) return bytes;
  const double range = bounds.max - bounds.min;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double t = (map.values[i] - bounds.min) / range;
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
  }
  return bytes;
}

HeatmapBounds emit_heatmap(const AnomalyMap& map, const fs::path& path) {
  HeatmapBounds bounds;
  const auto bytes = quantize_heatmap(map, bounds);
  write_pgm_bytes(map.height, map.width, bytes, path);
  fs::path sidecar = path;
  sidecar.replace_extension(".json");
  std::ofstream out(sidecar);
  if (!out) throw DataError("cannot write " + sidecar.string());
  out << json{{"min", bounds.min}, {"max", bounds.max}, {"degenerate", bounds.degenerate}}.dump(2)
      << "\n";
  if (!out) throw DataError("cannot write " + sidecar.string());
  return bounds;
}

}  // namespace dice
