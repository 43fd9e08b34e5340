#pragma once

#include <cstddef>
#include <vector>

#include "dice/encoder.hpp"
#include "dice/image.hpp"
#include "dice/prompts.hpp"
#include "dice/scoring.hpp"
#include "dice/tokens.hpp"

namespace dice {

// Residual linear adapter G(q) = W q + b with AdamW moment buffers.
struct AdapterState {
  Matrix weight;
  std::vector<double> bias;
  Matrix m_weight, v_weight;
  std::vector<double> m_bias, v_bias;
  std::size_t step_count = 0;

  // W = I, b = 0, zero moments: reproduces the zero-shot scores exactly.
  static AdapterState identity(std::size_t dim);
  std::size_t dim() const { return bias.size(); }
};

enum class SimilarityLoss {
  one_minus_cosine,  // L_sim = 1 - cos(A^VL, A^T), minimized at agreement
  literal_cosine,    // L_sim = cos(A^VL, A^T) as printed
};

struct TtaHyper {
  double learning_rate = 0.001;
  double beta_sim = 0.5;
  std::size_t steps = 2;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;  // applied to W only
  SimilarityLoss similarity = SimilarityLoss::one_minus_cosine;

  void validate() const;  // throws ConfigError
};

// q^T = normalize((G(q) + q) / 2) for every token. Throws
// DataError("degenerate adaptation") on a zero adapted token.
PatchTokenGrid adapt_tokens(const AdapterState& adapter, const PatchTokenGrid& grid);

// Language scores of adapted tokens (A^T, or A'^T for the pseudo grid).
AnomalyMap tta_score_map(const PatchTokenGrid& adapted, const TextTokenPair& text);

// Mean over masked cells of softplus(A^T - A'^T), i.e. the cross-entropy of
// picking the pseudo branch. Throws DataError("empty pseudo mask").
double loss_pseudo(const AnomalyMap& a_t, const AnomalyMap& a_t_pseudo,
                   const BinaryMap& mask_patch);

// Throws DataError("degenerate similarity") for a zero-norm map.
double loss_sim(const AnomalyMap& a_vl, const AnomalyMap& a_t,
                SimilarityLoss kind = SimilarityLoss::one_minus_cosine);

double loss_total(const AnomalyMap& a_t, const AnomalyMap& a_t_pseudo,
                  const BinaryMap& mask_patch, const AnomalyMap& a_vl,
                  const TtaHyper& hyper);

// Inputs of one adaptation problem (one query image).
struct TtaProblem {
  const PatchTokenGrid* tokens = nullptr;         // q
  const PatchTokenGrid* pseudo_tokens = nullptr;  // q'
  const BinaryMap* mask_patch = nullptr;          // M_a at patch resolution
  const TextTokenPair* text = nullptr;
  const AnomalyMap* joint = nullptr;              // A^VL_loc

  void validate() const;
};

// Loss of the adapter evaluated entirely in f64 (no f32 rounding of the
// adapted tokens).
double adapter_loss(const AdapterState& adapter, const TtaProblem& problem,
                    const TtaHyper& hyper);

struct AdapterGradients {
  Matrix weight;
  std::vector<double> bias;
  double loss = 0.0;
};

// Exact gradients of adapter_loss with respect to (W, b), backpropagated
// through both branches of the pseudo softmax, the token renormalization and
// the similarity term.
AdapterGradients loss_gradients(const AdapterState& adapter,
                                const TtaProblem& problem, const TtaHyper& hyper);

// One AdamW update in place.
void adamw_step(AdapterState& adapter, const AdapterGradients& grads,
                const TtaHyper& hyper);

struct TtaFit {
  AdapterState adapter;
  std::vector<double> losses;  // loss before each step, then the final loss
};

// Identity init followed by hyper.steps AdamW updates. Throws
// DataError("TTA diverged") on a non-finite loss.
TtaFit tta_fit(const TtaProblem& problem, const TtaHyper& hyper);

}  // namespace dice
