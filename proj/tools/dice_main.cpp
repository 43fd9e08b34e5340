// dice: command-line front end (eval, synth, fixture, export-prompts).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dice/error.hpp"
#include "dice/image.hpp"
#include "dice/pipeline.hpp"
#include "dice/preprocess.hpp"
#include "dice/prompts.hpp"
#include "dice/rng.hpp"
#include "dice/simd.hpp"
#include "dice/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct EvalFlags {
  std::string config_file;
  std::string manifest, mode, seeds, out, heatmaps, texture_dir, tta_dump, simd;
  std::size_t k = 0, steps = 0, image_height = 0, threads = 0;
  double lambda[5] = {}, tau = 0, lr = 0, beta = 0;
  bool literal_sim = false, tta_bypass = false, no_pixel_metrics = false;
  std::uint64_t encoder_seed = 0;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = std::min(text.find(',', pos), text.size());
    const std::string tok = text.substr(pos, comma - pos);
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw dice::ConfigError("invalid seed list: " + text);
    }
    pos = comma + 1;
  }
  return seeds;
}

// File values first, then any flag the user passed explicitly.
dice::RunConfig build_config(const EvalFlags& f, CLI::App& cmd) {
  dice::RunConfig c;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw dice::ConfigError("cannot open config " + f.config_file);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw dice::ConfigError(std::string("invalid config file: ") + e.what());
    }
    dice::apply_config_json(c, j);
  }
  auto given = [&](const char* name) { return cmd.count(name) > 0; };
  if (given("--manifest")) c.manifest_path = f.manifest;
  if (given("--mode")) c.mode = dice::parse_mode(f.mode);
  if (given("--k")) c.reference_count = f.k;
  if (given("--seeds")) c.seeds = parse_seeds(f.seeds);
  if (given("--lambda1")) c.fusion.lambda1 = f.lambda[0];
  if (given("--lambda2")) c.fusion.lambda2 = f.lambda[1];
  if (given("--lambda3")) c.fusion.lambda3 = f.lambda[2];
  if (given("--lambda4")) c.fusion.lambda4 = f.lambda[3];
  if (given("--lambda5")) c.fusion.lambda5 = f.lambda[4];
  if (given("--tau")) c.tau = f.tau;
  if (given("--steps")) c.tta.steps = f.steps;
  if (given("--lr")) c.tta.learning_rate = f.lr;
  if (given("--beta")) c.tta.beta_sim = f.beta;
  if (given("--literal-sim")) c.tta.similarity = dice::SimilarityLoss::literal_cosine;
  if (given("--tta-bypass")) c.tta_bypass = true;
  if (given("--no-pixel-metrics")) c.pixel_metrics = false;
  if (given("--image-height")) c.image_height = f.image_height;
  if (given("--threads")) c.threads = f.threads;
  if (given("--encoder-seed")) c.encoder_seed = f.encoder_seed;
  if (given("--out")) c.out_path = f.out;
  if (given("--heatmaps")) c.heatmap_dir = f.heatmaps;
  if (given("--textures")) c.texture_dir = f.texture_dir;
  if (given("--tta-dump")) c.tta_dump_dir = f.tta_dump;
  if (c.manifest_path.empty()) throw dice::ConfigError("--manifest is required");
  c.validate();
  return c;
}

void print_summary(const json& report) {
  const json& agg = report["summary"]["aggregate"];
  std::cout << "mode " << report["mode"].get<std::string>() << " (" << report["simd"].get<std::string>()
            << ")\n";
  for (const auto& [name, v] : agg.items()) {
    if (v.is_null()) {
      std::printf("  %-12s n/a\n", name.c_str());
    } else {
      std::printf("  %-12s %.4f +- %.4f\n", name.c_str(), v["mean"].get<double>(),
                  v["std"].get<double>());
    }
  }
}

// Writes one pseudo image, its pixel mask and a sidecar with the draw.
void synth_one(const dice::ImageTensor& image, const std::string& id, std::uint64_t seed,
               const dice::SynthConfig& cfg, const fs::path& out) {
  const dice::PseudoSample s = dice::make_pseudo_sample(image, dice::mix_seed(seed, dice::fnv1a(id)), cfg);
  dice::write_ppm(s.image, out / (id + ".ppm"));
  dice::write_mask(s.mask_pixel, out / (id + "_mask.pgm"));
  std::ofstream meta(out / (id + ".json"));
  meta << json{{"id", id}, {"seed", seed}, {"opacity", s.opacity},
               {"mask_pixels", s.mask_pixel.count()}}.dump(2)
       << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dice: zero-shot anomaly classification and localization"};
  app.require_subcommand(1);
  std::string simd_choice;
  app.add_option("--simd", simd_choice, "Kernel set: scalar | avx2 | auto");

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Score a manifest and write a report");
  eval->add_option("--config", ef.config_file, "JSON config (flags override it)");
  eval->add_option("--manifest", ef.manifest, "Dataset manifest JSON");
  eval->add_option("--mode", ef.mode, "text | dual | dual_tta");
  eval->add_option("--k", ef.k, "Reference images per query");
  eval->add_option("--seeds", ef.seeds, "Comma-separated seeds");
  eval->add_option("--lambda1", ef.lambda[0]);
  eval->add_option("--lambda2", ef.lambda[1]);
  eval->add_option("--lambda3", ef.lambda[2]);
  eval->add_option("--lambda4", ef.lambda[3]);
  eval->add_option("--lambda5", ef.lambda[4]);
  eval->add_option("--tau", ef.tau, "Softmax temperature");
  eval->add_option("--steps", ef.steps, "TTA AdamW steps");
  eval->add_option("--lr", ef.lr, "TTA learning rate");
  eval->add_option("--beta", ef.beta, "Weight of the similarity loss");
  eval->add_flag("--literal-sim", ef.literal_sim, "Use cos() as the similarity loss");
  eval->add_flag("--tta-bypass", ef.tta_bypass, "dual_tta with A^T := A^L_loc");
  eval->add_flag("--no-pixel-metrics", ef.no_pixel_metrics);
  eval->add_option("--image-height", ef.image_height, "Resize height for image inputs");
  eval->add_option("--encoder-seed", ef.encoder_seed, "Toy encoder weight seed");
  eval->add_option("--threads", ef.threads, "Worker threads (0 = all cores)");
  eval->add_option("--out", ef.out, "Report path");
  eval->add_option("--heatmaps", ef.heatmaps, "Directory for PGM heatmaps (first seed)");
  eval->add_option("--textures", ef.texture_dir, "Directory of PPM textures for synthesis");
  eval->add_option("--tta-dump", ef.tta_dump, "Directory for adapter weights and losses");

  std::string synth_manifest, synth_out;
  std::uint64_t synth_seed = 1;
  std::size_t synth_height = 240;
  dice::SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "Write pseudo-anomaly images and masks for a manifest");
  synth->add_option("--manifest", synth_manifest)->required();
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--seed", synth_seed);
  synth->add_option("--image-height", synth_height);
  synth->add_option("--threshold", synth_cfg.threshold);
  synth->add_option("--base-res", synth_cfg.base_res);
  synth->add_option("--octaves", synth_cfg.octaves);

  std::string fixture_out;
  std::uint64_t fixture_seed = 0;
  std::size_t fixture_n = 64, fixture_size = 128;
  auto* fixture = app.add_subcommand("fixture", "Generate the procedural test dataset");
  fixture->add_option("--out", fixture_out)->required();
  fixture->add_option("--seed", fixture_seed);
  fixture->add_option("--n", fixture_n, "Number of images");
  fixture->add_option("--size", fixture_size, "Image side (multiple of 16)");

  std::string prompt_class, prompt_kind, prompt_out;
  auto* prompts = app.add_subcommand("export-prompts", "Write the expanded prompt list");
  prompts->add_option("--class", prompt_class)->required();
  prompts->add_option("--kind", prompt_kind, "surface | object (default by class name)");
  prompts->add_option("--out", prompt_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (!simd_choice.empty() && simd_choice != "auto") {
      dice::simd::force_isa(dice::simd::parse_isa(simd_choice));
    }
    if (*eval) {
      const dice::RunConfig config = build_config(ef, *eval);
      const json report = dice::run_eval(config);
      if (config.out_path.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        print_summary(report);
      }
    } else if (*synth) {
      const dice::DatasetManifest manifest = dice::load_manifest(synth_manifest);
      fs::create_directories(synth_out);
      for (const auto& e : manifest.entries) {
        if (e.image_path.empty()) continue;
        const dice::ImageTensor img = dice::resize_bilinear(
            dice::read_netpbm(manifest.resolve(e.image_path)), synth_height);
        if (img.channels != 3) throw dice::DataError("synth expects RGB images: " + e.id);
        synth_one(img, e.id, synth_seed, synth_cfg, synth_out);
      }
    } else if (*fixture) {
      const auto m = dice::make_synthetic_fixture(fixture_seed, fixture_n, fixture_out, fixture_size);
      std::cout << "wrote " << m.entries.size() << " images to " << fixture_out << "\n";
    } else if (*prompts) {
      dice::CategoryKind kind = dice::default_category_kind(prompt_class);
      if (prompt_kind == "surface") {
        kind = dice::CategoryKind::surface;
      } else if (prompt_kind == "object") {
        kind = dice::CategoryKind::object;
      } else if (!prompt_kind.empty()) {
        throw dice::ConfigError("unknown kind: " + prompt_kind);
      }
      const auto set = dice::expand_templates(prompt_class, kind);
      dice::write_prompt_file(set, prompt_out);
      std::cout << set.normal_prompts.size() << " normal + " << set.anomalous_prompts.size()
                << " anomalous prompts\n";
    }
  } catch (const dice::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
