#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dice {

enum class CategoryKind { surface, object };

// carpet, leather, grid, tile and wood are surface categories.
CategoryKind default_category_kind(const std::string& class_name);

struct PromptSet {
  std::string class_name;
  std::vector<std::string> normal_prompts;
  std::vector<std::string> anomalous_prompts;
};

// Base template count, state words per polarity.
inline constexpr std::size_t kBaseTemplateCount = 22;
inline constexpr std::size_t kStateWordCount = 7;

// Full template x state x domain cross product (template-major, then state,
// then domain).
PromptSet expand_templates(const std::string& class_name, CategoryKind kind);

// Averaged normal/anomalous text embeddings plus softmax temperature.
struct TextTokenPair {
  std::vector<float> normal;
  std::vector<float> anomalous;
  double tau = 0.01;

  std::size_t dim() const { return normal.size(); }
};

// Each input embedding is normalized, each side is averaged and the mean is
// renormalized. Errors: "empty prompt embedding set", "degenerate text
// token", "shape mismatch", "tau must be positive".
TextTokenPair aggregate_text_tokens(std::span<const std::vector<float>> normal,
                                    std::span<const std::vector<float>> anomalous,
                                    double tau);

// One prompt per line (UTF-8, LF): all normal prompts, then all anomalous
// prompts. An embedding file for it therefore has 2n rows, normal first.
void write_prompt_file(const PromptSet& prompts, const std::filesystem::path& path);

}  // namespace dice
