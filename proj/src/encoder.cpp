#include "dice/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "dice/error.hpp"
#include "dice/rng.hpp"

namespace dice {
namespace {

Matrix random_matrix(SplitMix64& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  const double bound = std::sqrt(3.0 / static_cast<double>(cols));
  for (double& v : m.data) v = rng.uniform(-bound, bound);
  return m;
}

// C = A B^T
Matrix matmul_bt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  }
  return c;
}

// C = A B
Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  }
  return c;
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* row = m.data.data() + i * m.cols;
    const double mx = *std::max_element(row, row + m.cols);
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < m.cols; ++j) row[j] /= sum;
  }
}

void check_finite(const Matrix& m) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw DataError("non-finite tokens");
  }
}

// Standard attention with residual: X + softmax(scale Q K^T) V Wo^T.
Matrix qkv_attention(const Matrix& x, const Matrix& wq, const Matrix& wk,
                     const Matrix& wv, const Matrix& wo, double scale) {
  const Matrix q = matmul_bt(x, wq);
  const Matrix k = matmul_bt(x, wk);
  const Matrix v = matmul_bt(x, wv);
  Matrix attn = matmul_bt(q, k);
  for (double& a : attn.data) a *= scale;
  softmax_rows(attn);
  Matrix out = matmul_bt(matmul(attn, v), wo);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += x.data[i];
  return out;
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix vv_attention_weights(const Matrix& values, double scale) {
  Matrix attn = matmul_bt(values, values);
  for (double& a : attn.data) a *= scale;
  softmax_rows(attn);
  return attn;
}

Matrix vv_attention_block(const Matrix& values, const Matrix& proj,
                          double scale) {
  if (values.rows == 0 || proj.rows != values.cols || proj.cols != values.cols) {
    throw DataError("shape mismatch");
  }
  check_finite(values);
  const Matrix attn = vv_attention_weights(values, scale);
  Matrix out = matmul_bt(matmul(attn, values), proj);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += values.data[i];
  check_finite(out);
  return out;
}

ToyEncoder::ToyEncoder(std::uint64_t seed, ToyEncoderConfig config)
    : config_(config) {
  if (config_.patch_size == 0 || config_.dim == 0 || config_.channels == 0) {
    throw ConfigError("invalid toy encoder configuration");
  }
  SplitMix64 rng(seed);
  const std::size_t d = config_.dim;
  patch_embed_ = random_matrix(rng, d, config_.patch_size * config_.patch_size *
                                           config_.channels);
  class_embed_.resize(d);
  for (double& v : class_embed_) v = rng.uniform(-1.0, 1.0);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    wq_.push_back(random_matrix(rng, d, d));
    wk_.push_back(random_matrix(rng, d, d));
    wv_.push_back(random_matrix(rng, d, d));
    wo_.push_back(random_matrix(rng, d, d));
  }
}

Matrix ToyEncoder::embed_patches(const ImageTensor& image) const {
  const std::size_t p = config_.patch_size;
  const std::size_t gh = image.height / p;
  const std::size_t gw = image.width / p;
  const std::size_t in_dim = p * p * config_.channels;
  Matrix tokens(gh * gw, config_.dim);
  std::vector<double> patch(in_dim);
  for (std::size_t j = 0; j < gh; ++j) {
    for (std::size_t k = 0; k < gw; ++k) {
      std::size_t idx = 0;
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t c = 0; c < config_.channels; ++c) {
            patch[idx++] = image.at(j * p + y, k * p + x, c);
          }
        }
      }
      double* row = tokens.data.data() + (j * gw + k) * config_.dim;
      for (std::size_t r = 0; r < config_.dim; ++r) {
        double acc = 0.0;
        const double* w = patch_embed_.data.data() + r * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += w[i] * patch[i];
        row[r] = acc;
      }
    }
  }
  return tokens;
}

FeatureBundle ToyEncoder::encode(const ImageTensor& image, std::string id) const {
  const std::size_t p = config_.patch_size;
  if (image.height < 16 || image.width == 0 || image.height % p != 0 ||
      image.width % p != 0) {
    throw DataError("image not patch-aligned");
  }
  if (image.channels != config_.channels) throw DataError("shape mismatch");
  for (float v : image.data) {
    if (!std::isfinite(v)) throw DataError("non-finite tokens");
  }
  const std::size_t d = config_.dim;
  const std::size_t gh = image.height / p;
  const std::size_t gw = image.width / p;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  const Matrix patches = embed_patches(image);

  // Q-K-V path over [class; patches] -> class token.
  Matrix x(patches.rows + 1, d);
  std::copy(class_embed_.begin(), class_embed_.end(), x.data.begin());
  std::copy(patches.data.begin(), patches.data.end(), x.data.begin() + d);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    x = qkv_attention(x, wq_[l], wk_[l], wv_[l], wo_[l], scale);
  }
  check_finite(x);

  // V-V path over the patches -> patch tokens.
  Matrix v = patches;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    v = vv_attention_block(v, wo_[l], scale);
  }

  FeatureBundle bundle;
  bundle.id = std::move(id);
  bundle.class_token = ClassToken(std::vector<float>(x.data.begin(), x.data.begin() + d));
  bundle.patch_grid = PatchTokenGrid(gh, gw, d, std::vector<float>(v.data.begin(), v.data.end()));
  bundle.image_height = image.height;
  bundle.image_width = image.width;
  return bundle;
}

FeatureBundle toy_encode_image(const ImageTensor& image, std::uint64_t seed,
                               const ToyEncoderConfig& config) {
  return ToyEncoder(seed, config).encode(image);
}

std::vector<float> toy_text_embedding(std::string_view prompt, std::size_t dim,
                                      std::uint64_t seed) {
  std::vector<double> acc(dim, 0.0);
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    while (pos < prompt.size() && prompt[pos] == ' ') ++pos;
    const std::size_t start = pos;
    while (pos < prompt.size() && prompt[pos] != ' ') ++pos;
    if (pos == start) break;
    SplitMix64 rng(fnv1a(prompt.substr(start, pos - start)) ^ seed);
    for (double& a : acc) a += rng.uniform(-1.0, 1.0);
  }
  normalize_in_place(std::span<double>(acc), "degenerate text token");
  return {acc.begin(), acc.end()};
}

}  // namespace dice
