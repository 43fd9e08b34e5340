#include "dice/tta.hpp"

#include <cmath>

#include "dice/error.hpp"
#include "dice/simd.hpp"

namespace dice {
namespace {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_same_shape(const AnomalyMap& a, const AnomalyMap& b) {
  if (a.height != b.height || a.width != b.width) throw DataError("shape mismatch");
}

void require_mask_shape(const AnomalyMap& a, const BinaryMap& m) {
  if (a.height != m.height || a.width != m.width) throw DataError("shape mismatch");
}

double pseudo_term(std::span<const double> a_t, std::span<const double> a_p,
                   const BinaryMap& mask) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a_t.size(); ++i) {
    if (!mask.data[i]) continue;
    sum += softplus(a_t[i] - a_p[i]);
    ++count;
  }
  if (count == 0) throw DataError("empty pseudo mask");
  return sum / static_cast<double>(count);
}

struct CosineParts {
  double cosine;
  double norm_a;
  double norm_b;
};

CosineParts cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (!(na > 0.0) || !(nb > 0.0)) throw DataError("degenerate similarity");
  return {ab / (na * nb), na, nb};
}

double sim_term(std::span<const double> joint, std::span<const double> a_t,
                SimilarityLoss kind) {
  const double c = cosine(joint, a_t).cosine;
  return kind == SimilarityLoss::one_minus_cosine ? 1.0 - c : c;
}

// Forward state of one branch (original or pseudo tokens) in f64.
struct Branch {
  std::size_t n = 0, d = 0;
  std::vector<double> x;      // input tokens
  std::vector<double> u;      // adapted, normalized tokens
  std::vector<double> norm;   // ||z|| per token
  std::vector<double> score;  // A per token
};

Branch forward(const AdapterState& ad, const PatchTokenGrid& grid,
               const std::vector<double>& t_a, const std::vector<double>& t_n,
               double tau) {
  const auto& k = simd::kernels();
  Branch br;
  br.n = grid.size();
  br.d = grid.dim();
  br.x.assign(grid.values().begin(), grid.values().end());
  br.u.resize(br.x.size());
  br.norm.resize(br.n);
  br.score.resize(br.n);
  std::vector<double> z(br.d);
  for (std::size_t i = 0; i < br.n; ++i) {
    const double* xi = br.x.data() + i * br.d;
    k.gemv_f64(ad.weight.data.data(), br.d, br.d, xi, z.data());
    double sq = 0.0;
    for (std::size_t r = 0; r < br.d; ++r) {
      z[r] = 0.5 * (z[r] + ad.bias[r] + xi[r]);
      sq += z[r] * z[r];
    }
    const double nrm = std::sqrt(sq);
    if (!(nrm > 0.0) || !std::isfinite(nrm)) throw DataError("degenerate adaptation");
    double* ui = br.u.data() + i * br.d;
    for (std::size_t r = 0; r < br.d; ++r) ui[r] = z[r] / nrm;
    br.norm[i] = nrm;
    const double logit = (k.dot_f64(ui, t_a.data(), br.d) - k.dot_f64(ui, t_n.data(), br.d)) / tau;
    br.score[i] = logistic(logit);
  }
  return br;
}

// Accumulates dL/dW and dL/db given dL/dA for every token of a branch.
void backward(const Branch& br, std::span<const double> grad_score,
              const std::vector<double>& t_a, const std::vector<double>& t_n,
              double tau, AdapterGradients& out) {
  const std::size_t d = br.d;
  std::vector<double> gz(d);
  for (std::size_t i = 0; i < br.n; ++i) {
    const double a = br.score[i];
    const double g_logit = grad_score[i] * a * (1.0 - a) / tau;
    if (g_logit == 0.0) continue;
    const double* ui = br.u.data() + i * d;
    const double* xi = br.x.data() + i * d;
    // g_u = g_logit * (t_a - t_n); g_z = (g_u - <g_u,u> u) / ||z||
    double gu_dot_u = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
      gz[r] = g_logit * (t_a[r] - t_n[r]);
      gu_dot_u += gz[r] * ui[r];
    }
    for (std::size_t r = 0; r < d; ++r) {
      gz[r] = 0.5 * (gz[r] - gu_dot_u * ui[r]) / br.norm[i];
      out.bias[r] += gz[r];
      double* wrow = out.weight.data.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) wrow[c] += gz[r] * xi[c];
    }
  }
}

struct Evaluation {
  Branch orig, pseudo;
  double loss;
};

Evaluation evaluate(const AdapterState& ad, const TtaProblem& p, const TtaHyper& h,
                    const std::vector<double>& t_a, const std::vector<double>& t_n) {
  Evaluation ev{forward(ad, *p.tokens, t_a, t_n, p.text->tau),
                forward(ad, *p.pseudo_tokens, t_a, t_n, p.text->tau), 0.0};
  ev.loss = pseudo_term(ev.orig.score, ev.pseudo.score, *p.mask_patch) +
            h.beta_sim * sim_term(p.joint->values, ev.orig.score, h.similarity);
  return ev;
}

}  // namespace

AdapterState AdapterState::identity(std::size_t dim) {
  AdapterState s;
  s.weight = Matrix::identity(dim);
  s.bias.assign(dim, 0.0);
  s.m_weight = Matrix(dim, dim);
  s.v_weight = Matrix(dim, dim);
  s.m_bias.assign(dim, 0.0);
  s.v_bias.assign(dim, 0.0);
  return s;
}

void TtaHyper::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta_sim >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("AdamW betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("AdamW eps must be positive");
}

void TtaProblem::validate() const {
  if (!tokens || !pseudo_tokens || !mask_patch || !text || !joint) {
    throw DataError("incomplete TTA problem");
  }
  if (tokens->height() != pseudo_tokens->height() ||
      tokens->width() != pseudo_tokens->width() || tokens->dim() != pseudo_tokens->dim() ||
      tokens->dim() != text->dim() || mask_patch->height != tokens->height() ||
      mask_patch->width != tokens->width() || joint->height != tokens->height() ||
      joint->width != tokens->width()) {
    throw DataError("shape mismatch");
  }
}

PatchTokenGrid adapt_tokens(const AdapterState& adapter, const PatchTokenGrid& grid) {
  const std::size_t d = grid.dim();
  if (adapter.dim() != d) throw DataError("shape mismatch");
  const auto& k = simd::kernels();
  std::vector<float> out(grid.values().size());
  std::vector<double> x(d), z(d);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto tok = grid.token(i);
    x.assign(tok.begin(), tok.end());
    k.gemv_f64(adapter.weight.data.data(), d, d, x.data(), z.data());
    for (std::size_t r = 0; r < d; ++r) z[r] = 0.5 * (z[r] + adapter.bias[r] + x[r]);
    normalize_in_place(std::span<double>(z), "degenerate adaptation");
    for (std::size_t r = 0; r < d; ++r) out[i * d + r] = static_cast<float>(z[r]);
  }
  return PatchTokenGrid(grid.height(), grid.width(), d, std::move(out));
}

AnomalyMap tta_score_map(const PatchTokenGrid& adapted, const TextTokenPair& text) {
  return language_map(adapted, text);
}

double loss_pseudo(const AnomalyMap& a_t, const AnomalyMap& a_t_pseudo,
                   const BinaryMap& mask_patch) {
  require_same_shape(a_t, a_t_pseudo);
  require_mask_shape(a_t, mask_patch);
  return pseudo_term(a_t.values, a_t_pseudo.values, mask_patch);
}

double loss_sim(const AnomalyMap& a_vl, const AnomalyMap& a_t, SimilarityLoss kind) {
  require_same_shape(a_vl, a_t);
  return sim_term(a_vl.values, a_t.values, kind);
}

double loss_total(const AnomalyMap& a_t, const AnomalyMap& a_t_pseudo,
                  const BinaryMap& mask_patch, const AnomalyMap& a_vl,
                  const TtaHyper& hyper) {
  return loss_pseudo(a_t, a_t_pseudo, mask_patch) +
         hyper.beta_sim * loss_sim(a_vl, a_t, hyper.similarity);
}

double adapter_loss(const AdapterState& adapter, const TtaProblem& problem,
                    const TtaHyper& hyper) {
  problem.validate();
  if (adapter.dim() != problem.tokens->dim()) throw DataError("shape mismatch");
  const std::vector<double> t_a(problem.text->anomalous.begin(), problem.text->anomalous.end());
  const std::vector<double> t_n(problem.text->normal.begin(), problem.text->normal.end());
  return evaluate(adapter, problem, hyper, t_a, t_n).loss;
}

AdapterGradients loss_gradients(const AdapterState& adapter,
                                const TtaProblem& problem, const TtaHyper& hyper) {
  problem.validate();
  const std::size_t d = problem.tokens->dim();
  if (adapter.dim() != d) throw DataError("shape mismatch");
  const std::vector<double> t_a(problem.text->anomalous.begin(), problem.text->anomalous.end());
  const std::vector<double> t_n(problem.text->normal.begin(), problem.text->normal.end());
  const Evaluation ev = evaluate(adapter, problem, hyper, t_a, t_n);
  const std::size_t n = ev.orig.n;
  const BinaryMap& mask = *problem.mask_patch;

  std::vector<double> g_orig(n, 0.0), g_pseudo(n, 0.0);
  std::size_t masked = mask.count();
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.data[i]) continue;
    const double s = logistic(ev.orig.score[i] - ev.pseudo.score[i]) / static_cast<double>(masked);
    g_orig[i] += s;
    g_pseudo[i] -= s;
  }
  if (hyper.beta_sim != 0.0) {
    const auto& joint = problem.joint->values;
    const CosineParts c = cosine(joint, ev.orig.score);
    const double sign = hyper.similarity == SimilarityLoss::one_minus_cosine ? -1.0 : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dcos = joint[i] / (c.norm_a * c.norm_b) -
                          c.cosine * ev.orig.score[i] / (c.norm_b * c.norm_b);
      g_orig[i] += hyper.beta_sim * sign * dcos;
    }
  }

  AdapterGradients g{Matrix(d, d), std::vector<double>(d, 0.0), ev.loss};
  backward(ev.orig, g_orig, t_a, t_n, problem.text->tau, g);
  backward(ev.pseudo, g_pseudo, t_a, t_n, problem.text->tau, g);
  return g;
}

void adamw_step(AdapterState& s, const AdapterGradients& g, const TtaHyper& h) {
  s.step_count += 1;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(h.adam_beta1, t);
  const double c2 = 1.0 - std::pow(h.adam_beta2, t);
  auto update = [&](double& p, double& m, double& v, double grad, bool decay) {
    if (decay) p *= 1.0 - h.learning_rate * h.weight_decay;
    m = h.adam_beta1 * m + (1.0 - h.adam_beta1) * grad;
    v = h.adam_beta2 * v + (1.0 - h.adam_beta2) * grad * grad;
    p -= h.learning_rate * (m / c1) / (std::sqrt(v / c2) + h.adam_eps);
  };
  for (std::size_t i = 0; i < s.weight.data.size(); ++i) {
    update(s.weight.data[i], s.m_weight.data[i], s.v_weight.data[i], g.weight.data[i], true);
  }
  for (std::size_t i = 0; i < s.bias.size(); ++i) {
    update(s.bias[i], s.m_bias[i], s.v_bias[i], g.bias[i], false);
  }
}

TtaFit tta_fit(const TtaProblem& problem, const TtaHyper& hyper) {
  hyper.validate();
  problem.validate();
  TtaFit fit{AdapterState::identity(problem.tokens->dim()), {}};
  for (std::size_t step = 0; step < hyper.steps; ++step) {
    const AdapterGradients g = loss_gradients(fit.adapter, problem, hyper);
    if (!std::isfinite(g.loss)) throw DataError("TTA diverged");
    fit.losses.push_back(g.loss);
    adamw_step(fit.adapter, g, hyper);
  }
  const double final_loss = adapter_loss(fit.adapter, problem, hyper);
  if (!std::isfinite(final_loss)) throw DataError("TTA diverged");
  fit.losses.push_back(final_loss);
  return fit;
}

}  // namespace dice
