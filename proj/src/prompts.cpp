#include "dice/prompts.hpp"

#include <array>
#include <fstream>
#include <string_view>

#include "dice/error.hpp"
#include "dice/tokens.hpp"

namespace dice {
namespace {

// "[d]" is the domain word, "[s]" the state phrase.
constexpr std::array<std::string_view, kBaseTemplateCount> kTemplates = {
    "a [d] cropped photo of the [s]",
    "a [d] cropped photo of a [s]",
    "a [d] close-up photo of a [s]",
    "a [d] close-up photo of the [s]",
    "a bright [d] photo of a [s]",
    "a bright [d] photo of the [s]",
    "a dark [d] photo of the [s]",
    "a dark [d] photo of a [s]",
    "a jpeg corrupted [d] photo of a [s]",
    "a jpeg corrupted [d] photo of the [s]",
    "a blurry [d] photo of the [s]",
    "a blurry [d] photo of a [s]",
    "a [d] photo of a [s]",
    "a [d] photo of the [s]",
    "a [d] photo of a small [s]",
    "a [d] photo of the small [s]",
    "a [d] photo of a large [s]",
    "a [d] photo of the large [s]",
    "a [d] photo of the [s] for visual inspection",
    "a [d] photo of a [s] for visual inspection",
    "a [d] photo of the [s] for anomaly detection",
    "a [d] photo of a [s] for anomaly detection",
};

// "[c]" is the class name.
constexpr std::array<std::string_view, kStateWordCount> kNormalStates = {
    "normal [c]",        "unblemished [c]",    "flawless [c]",
    "perfect [c]",       "[c] without flaw",   "[c] without damage",
    "[c] without defect",
};

constexpr std::array<std::string_view, kStateWordCount> kAnomalousStates = {
    "damaged [c]",    "abnormal [c]",     "imperfect [c]",   "blemished [c]",
    "[c] with flaw",  "[c] with damage",  "[c] with defect",
};

std::string substitute(std::string_view text, std::string_view key,
                       std::string_view value) {
  std::string out(text);
  const auto pos = out.find(key);
  if (pos != std::string::npos) out.replace(pos, key.size(), value);
  return out;
}

std::vector<std::string> expand(const std::array<std::string_view, kStateWordCount>& states,
                                const std::string& class_name,
                                const std::vector<std::string_view>& domains) {
  std::vector<std::string> out;
  out.reserve(kTemplates.size() * states.size() * domains.size());
  for (auto tmpl : kTemplates) {
    for (auto state : states) {
      const std::string s = substitute(state, "[c]", class_name);
      for (auto domain : domains) {
        out.push_back(substitute(substitute(tmpl, "[d]", domain), "[s]", s));
      }
    }
  }
  return out;
}

std::vector<float> mean_direction(std::span<const std::vector<float>> embeds) {
  if (embeds.empty()) throw DataError("empty prompt embedding set");
  const std::size_t d = embeds.front().size();
  std::vector<double> acc(d, 0.0);
  std::vector<double> unit(d);
  for (const auto& e : embeds) {
    if (e.size() != d || d == 0) throw DataError("shape mismatch");
    unit.assign(e.begin(), e.end());
    normalize_in_place(std::span<double>(unit), "degenerate text token");
    for (std::size_t i = 0; i < d; ++i) acc[i] += unit[i];
  }
  for (double& a : acc) a /= static_cast<double>(embeds.size());
  // Cancellation leaves a tiny residue instead of an exact zero.
  double sq = 0.0;
  for (double a : acc) sq += a * a;
  if (sq < 1e-24) throw DataError("degenerate text token");
  normalize_in_place(std::span<double>(acc), "degenerate text token");
  return {acc.begin(), acc.end()};
}

}  // namespace

CategoryKind default_category_kind(const std::string& class_name) {
  static constexpr std::array<std::string_view, 5> kSurface = {
      "carpet", "leather", "grid", "tile", "wood"};
  for (auto s : kSurface) {
    if (class_name == s) return CategoryKind::surface;
  }
  return CategoryKind::object;
}

PromptSet expand_templates(const std::string& class_name, CategoryKind kind) {
  const std::vector<std::string_view> domains =
      kind == CategoryKind::surface
          ? std::vector<std::string_view>{"industrial", "textural", "surface"}
          : std::vector<std::string_view>{"industrial", "manufacturing"};
  return {class_name, expand(kNormalStates, class_name, domains),
          expand(kAnomalousStates, class_name, domains)};
}

TextTokenPair aggregate_text_tokens(std::span<const std::vector<float>> normal,
                                    std::span<const std::vector<float>> anomalous,
                                    double tau) {
  if (!(tau > 0.0)) throw DataError("tau must be positive");
  TextTokenPair pair;
  pair.normal = mean_direction(normal);
  pair.anomalous = mean_direction(anomalous);
  pair.tau = tau;
  if (pair.normal.size() != pair.anomalous.size()) throw DataError("shape mismatch");
  return pair;
}

void write_prompt_file(const PromptSet& prompts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& p : prompts.normal_prompts) out << p << '\n';
  for (const auto& p : prompts.anomalous_prompts) out << p << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace dice
