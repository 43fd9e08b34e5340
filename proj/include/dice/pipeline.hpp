#pragma once

// Dataset ingestion, reference pairing, per-image scoring in the three
// evaluation modes and report assembly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dice/encoder.hpp"
#include "dice/preprocess.hpp"
#include "dice/prompts.hpp"
#include "dice/scoring.hpp"
#include "dice/synth.hpp"
#include "dice/tta.hpp"

namespace dice {

// text:     A^L_loc / A^L_cls only.
// dual:     A^V + A^L_loc for localization, lambda3 A^L_cls + lambda4 max A^V.
// dual_tta: lambda1 A^V + lambda2 A^T, lambda3 A^L_cls + lambda4 max A^V +
//           lambda5 max A^T.
enum class Mode { text, dual, dual_tta };

Mode parse_mode(const std::string& name);
std::string to_string(Mode mode);

struct RunConfig {
  std::string manifest_path;
  Mode mode = Mode::dual_tta;
  FusionWeights fusion;
  double tau = 0.01;
  std::size_t reference_count = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6};
  TtaHyper tta;
  SynthConfig synth;
  std::uint64_t encoder_seed = 0;
  ToyEncoderConfig encoder;
  // 0 = use the manifest's image_height, else 240.
  std::size_t image_height = 0;
  double fpr_limit = 0.3;
  bool pixel_metrics = true;
  // Score dual_tta with A^T := A^L_loc instead of fitting an adapter.
  bool tta_bypass = false;
  std::string out_path;
  std::string heatmap_dir;
  std::string texture_dir;
  std::string tta_dump_dir;
  std::size_t threads = 0;  // 0 = hardware concurrency

  void validate() const;  // throws ConfigError
};

// Reads every key present in j; missing keys keep their current value.
void apply_config_json(RunConfig& config, const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& config);

struct ManifestEntry {
  std::string id;
  std::string category;
  std::string feature_dir;   // file-backed features
  std::string image_path;    // toy-encoder input (PPM/PGM)
  std::string gt_mask_path;  // optional
  int label = 0;
};

struct CategoryInfo {
  CategoryKind kind = CategoryKind::object;
  std::string text_embeddings;  // DTF (2n x d): n normal rows then n anomalous
};

// JSON: {"image_height"?: N, "categories"?: {name: {"kind", "text_embeddings"?}},
//        "entries": [{"id","category","feature_dir"|"image_path",
//                     "gt_mask_path"?, "label"}]}
// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::map<std::string, CategoryInfo> categories;
  std::size_t image_height = 0;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const;
  void validate() const;  // unique ids, label in {0,1}, one source per entry
};

DatasetManifest load_manifest(const std::filesystem::path& path);
nlohmann::json manifest_to_json(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// n x k table of reference indices: each row is k distinct indices drawn
// uniformly without replacement from {0..n-1} \ {row}. Deterministic in
// (n, k, seed). Row i for k is a prefix of row i for any larger k.
std::vector<std::vector<std::size_t>> pair_assignment(std::size_t n, std::size_t k,
                                                      std::uint64_t seed);

// One image after preprocessing and encoding.
struct EncodedImage {
  std::string id;
  std::string category;
  int label = 0;
  std::vector<FeatureBundle> tiles;
  TilePlan plan;  // empty tiles when the image is scored as a single bundle
  std::size_t pixel_height = 0;
  std::size_t pixel_width = 0;
  std::optional<BinaryMap> gt;           // at pixel resolution
  std::vector<ImageTensor> tile_pixels;  // [0,1] tiles for pseudo synthesis
};

struct Dataset {
  std::vector<EncodedImage> images;
  std::map<std::string, TextTokenPair> text;
  std::map<std::string, std::vector<std::size_t>> by_category;
  std::vector<ImageTensor> textures;  // optional external textures
  std::optional<ToyEncoder> encoder;  // present when any image is toy-encoded
};

Dataset load_dataset(const RunConfig& config, const DatasetManifest& manifest);

struct TileScores {
  AnomalyMap language;  // A^L_loc
  AnomalyMap visual;    // A^V (empty in text mode)
  AnomalyMap adapted;   // A^T (dual_tta only)
  double class_score = 0.0;  // A^L_cls
  std::optional<TtaFit> fit;
  double opacity = 0.0;
};

struct ImageScores {
  std::vector<TileScores> tiles;
  AnomalyMap pixel_map;       // fused, upsampled, merged
  double classification = 0.0;
};

// Builds the TTA problem inputs for one tile (pseudo grid and patch mask),
// synthesizing and encoding a pseudo sample in toy mode.
struct PseudoInputs {
  PatchTokenGrid grid;
  BinaryMap mask_patch;
  double opacity = 0.0;
};
PseudoInputs pseudo_inputs(const Dataset& data, std::size_t image, std::size_t tile,
                           std::uint64_t seed, const RunConfig& config);

ImageScores score_image(const Dataset& data, std::size_t image,
                        const std::vector<std::size_t>& references, std::uint64_t seed,
                        const RunConfig& config);

// Full evaluation; returns the report JSON and writes it to config.out_path
// when set.
nlohmann::json run_eval(const RunConfig& config);
nlohmann::json run_eval(const RunConfig& config, const Dataset& data);

// Min-max scaled 8-bit PGM plus a sidecar JSON ({"min","max","degenerate"})
// next to it (same stem, .json). A constant map becomes mid-gray (128).
struct HeatmapBounds {
  double min = 0.0;
  double max = 0.0;
  bool degenerate = false;
};
HeatmapBounds emit_heatmap(const AnomalyMap& map, const std::filesystem::path& path);
std::vector<std::uint8_t> quantize_heatmap(const AnomalyMap& map, HeatmapBounds& bounds);

// Procedural dataset: textured-square "normal" images and anomalous variants
// blended through Perlin masks, with exact ground-truth masks. Writes images,
// masks and manifest.json under out_dir.
DatasetManifest make_synthetic_fixture(std::uint64_t seed, std::size_t n_images,
                                       const std::filesystem::path& out_dir,
                                       std::size_t image_size = 128);

}  // namespace dice
