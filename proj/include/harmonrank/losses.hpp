#pragma once

// AUC metrics and the training losses compared in the ensemble experiments.
// Every loss returns its value and the gradient with respect to the ensemble
// scores. Objectives whose column lacks either class in the current batch are
// skipped: they contribute zero loss and zero gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "harmonrank/numeric.hpp"
#include "harmonrank/softsort.hpp"
#include "harmonrank/stats.hpp"

namespace harmonrank {

/// Row-major n x M binary label matrix.
struct BatchLabels {
  std::size_t num_objectives = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> objective_names;

  BatchLabels() = default;
  BatchLabels(std::size_t n, std::size_t m) : num_objectives(m), labels(n * m, 0) {
    for (std::size_t j = 0; j < m; ++j) objective_names.push_back("obj" + std::to_string(j));
  }

  std::size_t size() const { return num_objectives == 0 ? 0 : labels.size() / num_objectives; }
  std::uint8_t operator()(std::size_t i, std::size_t m) const { return labels[i * num_objectives + m]; }
  std::uint8_t& operator()(std::size_t i, std::size_t m) { return labels[i * num_objectives + m]; }

  std::vector<std::uint8_t> column(std::size_t m) const {
    std::vector<std::uint8_t> col(size());
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = (*this)(i, m);
    return col;
  }

  std::size_t positives(std::size_t m) const {
    std::size_t p = 0;
    for (std::size_t i = 0; i < size(); ++i) p += (*this)(i, m);
    return p;
  }

  void validate() const {
    if (num_objectives == 0) throw std::invalid_argument("BatchLabels: no objectives");
    if (labels.size() % num_objectives != 0) throw std::invalid_argument("BatchLabels: ragged matrix");
    for (std::uint8_t y : labels) {
      if (y > 1) throw std::invalid_argument("BatchLabels: label outside {0,1}");
    }
  }
};

struct LossWeights {
  std::vector<double> w;

  static LossWeights uniform(std::size_t m) { return {std::vector<double>(m, 1.0)}; }

  double at(std::size_t m) const { return w.empty() ? 1.0 : w.at(m); }

  void validate(std::size_t m) const {
    if (!w.empty() && w.size() != m) throw std::invalid_argument("LossWeights: size mismatch");
    for (double x : w) {
      if (!(x > 0.0) || !std::isfinite(x)) throw std::invalid_argument("LossWeights: weights must be positive");
    }
  }
};

struct AUCReport {
  std::vector<std::optional<double>> per_objective;
  double sum = 0.0;
  /// Set when at least one objective was absent (single-class column).
  bool degenerate = false;
};

/// Strict-ge credits a tie as a correctly ordered pair; mid-rank credits 0.5.
enum class TieCredit { mid_rank, strict_ge };

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;
};

namespace detail {

inline void require_finite(std::span<const double> scores) {
  for (double s : scores) {
    if (!std::isfinite(s)) throw std::invalid_argument("non-finite input");
  }
}

inline void require_rows(std::span<const double> scores, const BatchLabels& batch) {
  if (scores.size() != batch.size()) throw std::invalid_argument("scores/labels length mismatch");
}

}  // namespace detail

/// AUC via the rank-sum identity, O(n log n).
inline double exact_auc(std::span<const double> scores, std::span<const std::uint8_t> labels,
                        TieCredit ties = TieCredit::mid_rank) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores/labels length mismatch");
  std::size_t pos = 0;
  for (std::uint8_t y : labels) pos += (y != 0);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("degenerate labels");

  const std::vector<double> ranks = mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i]) rank_sum += ranks[i];
  }
  const double p = static_cast<double>(pos);
  double u = rank_sum - p * (p + 1.0) / 2.0;
  if (ties == TieCredit::strict_ge) {
    // Each tied positive-negative pair received 0.5 above; add the other half.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      std::size_t gp = 0;
      while (j < order.size() && scores[order[j]] == scores[order[i]]) gp += labels[order[j++]] != 0;
      u += 0.5 * static_cast<double>(gp) * static_cast<double>(j - i - gp);
      i = j;
    }
  }
  return u / (p * static_cast<double>(neg));
}

inline AUCReport auc_report(std::span<const double> scores, const BatchLabels& batch,
                            TieCredit ties = TieCredit::mid_rank) {
  detail::require_rows(scores, batch);
  AUCReport report;
  for (std::size_t m = 0; m < batch.num_objectives; ++m) {
    const std::vector<std::uint8_t> col = batch.column(m);
    const std::size_t pos = batch.positives(m);
    if (pos == 0 || pos == col.size()) {
      report.per_objective.emplace_back();
      report.degenerate = true;
      continue;
    }
    const double g = exact_auc(scores, col, ties);
    report.per_objective.emplace_back(g);
    report.sum += g;
  }
  return report;
}

/// Negative weighted soft AUC sum through one shared soft-rank evaluation.
inline LossResult rank_auc_loss(std::span<const double> scores, const BatchLabels& batch,
                                const LossWeights& weights, const SoftRankConfig& cfg) {
  detail::require_rows(scores, batch);
  detail::require_finite(scores);
  weights.validate(batch.num_objectives);
  const std::size_t n = scores.size();
  LossResult out;
  out.grad.assign(n, 0.0);
  if (n < 2) throw std::invalid_argument("rank_auc_loss: need at least two samples");

  const SoftRankResult ranks = soft_rank(scores, cfg);
  std::vector<double> upstream(n, 0.0);
  bool any = false;
  for (std::size_t m = 0; m < batch.num_objectives; ++m) {
    const double p = static_cast<double>(batch.positives(m));
    const double q = static_cast<double>(n) - p;
    if (p == 0.0 || q == 0.0) continue;
    any = true;
    const double scale = weights.at(m) / (p * q);
    double dot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (batch(i, m)) {
        dot += ranks.soft_ranks[i];
        upstream[i] -= scale;
      }
    }
    out.loss -= weights.at(m) * (dot - p * (p + 1.0) / 2.0) / (p * q);
  }
  if (any) out.grad = soft_rank_backward(ranks, upstream, cfg);
  return out;
}

/// Per-objective calibration head used only inside the BCE baseline.
struct BceHeads {
  std::vector<double> scale;
  std::vector<double> bias;

  static BceHeads identity(std::size_t m) { return {std::vector<double>(m, 1.0), std::vector<double>(m, 0.0)}; }
};

struct MbceResult {
  double loss = 0.0;
  std::vector<double> grad_scores;
  BceHeads grad_heads;
};

inline MbceResult mbce_loss(std::span<const double> scores, const BatchLabels& batch, const LossWeights& weights,
                            const BceHeads& heads) {
  detail::require_rows(scores, batch);
  weights.validate(batch.num_objectives);
  const std::size_t n = scores.size();
  const std::size_t num_obj = batch.num_objectives;
  if (heads.scale.size() != num_obj || heads.bias.size() != num_obj) {
    throw std::invalid_argument("mbce_loss: head count mismatch");
  }
  if (n == 0) throw std::invalid_argument("mbce_loss: empty batch");
  MbceResult out;
  out.grad_scores.assign(n, 0.0);
  out.grad_heads = {std::vector<double>(num_obj, 0.0), std::vector<double>(num_obj, 0.0)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t m = 0; m < num_obj; ++m) {
    const double w = weights.at(m);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = heads.scale[m] * scores[i] + heads.bias[m];
      const double y = batch(i, m);
      total += softplus(z) - y * z;
      const double dz = w * (sigmoid(z) - y) * inv_n;
      out.grad_scores[i] += dz * heads.scale[m];
      out.grad_heads.scale[m] += dz * scores[i];
      out.grad_heads.bias[m] += dz;
    }
    out.loss += w * total * inv_n;
  }
  return out;
}

/// Mean squared error against the weighted label sum.
inline LossResult label_agg_loss(std::span<const double> scores, const BatchLabels& batch,
                                 const LossWeights& weights) {
  detail::require_rows(scores, batch);
  weights.validate(batch.num_objectives);
  const std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("label_agg_loss: empty batch");
  LossResult out;
  out.grad.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double target = 0.0;
    for (std::size_t m = 0; m < batch.num_objectives; ++m) target += weights.at(m) * batch(i, m);
    const double r = scores[i] - target;
    out.loss += r * r * inv_n;
    out.grad[i] = 2.0 * r * inv_n;
  }
  return out;
}

/// Pair-mean divides each objective's pair total by |pos| x |neg|; pair-sum does not.
enum class PairNormalization { mean, sum };

namespace detail {

// Pair-mean (or pair-sum) over positive x negative pairs of f(s_pos - s_neg), summed over
// objectives with their weights. `surrogate` returns {value, d value / d diff}.
template <typename Surrogate>
LossResult pairwise_loss(std::span<const double> scores, const BatchLabels& batch, const LossWeights& weights,
                         PairNormalization norm, Surrogate surrogate) {
  require_rows(scores, batch);
  weights.validate(batch.num_objectives);
  const std::size_t n = scores.size();
  LossResult out;
  out.grad.assign(n, 0.0);
  std::vector<std::size_t> pos, neg;
  for (std::size_t m = 0; m < batch.num_objectives; ++m) {
    pos.clear();
    neg.clear();
    for (std::size_t i = 0; i < n; ++i) (batch(i, m) ? pos : neg).push_back(i);
    if (pos.empty() || neg.empty()) continue;
    const double pairs = static_cast<double>(pos.size()) * static_cast<double>(neg.size());
    const double scale = norm == PairNormalization::mean ? weights.at(m) / pairs : weights.at(m);
    double total = 0.0;
    for (std::size_t i : pos) {
      const double si = scores[i];
      double gi = 0.0;
      for (std::size_t j : neg) {
        const auto [value, slope] = surrogate(si - scores[j]);
        total += value;
        gi += slope;
        out.grad[j] -= slope * scale;
      }
      out.grad[i] += gi * scale;
    }
    out.loss += total * scale;
  }
  return out;
}

}  // namespace detail

/// Pair-mean log(1 + exp(-(s_pos - s_neg))).
inline LossResult pairwise_logistic_loss(std::span<const double> scores, const BatchLabels& batch,
                                         const LossWeights& weights,
                                         PairNormalization norm = PairNormalization::mean) {
  return detail::pairwise_loss(scores, batch, weights, norm, [](double diff) {
    return std::pair{softplus(-diff), -sigmoid(-diff)};
  });
}

/// Pair-mean (1 - (s_pos - s_neg))^2.
inline LossResult pairwise_square_loss(std::span<const double> scores, const BatchLabels& batch,
                                       const LossWeights& weights,
                                       PairNormalization norm = PairNormalization::mean) {
  return detail::pairwise_loss(scores, batch, weights, norm, [](double diff) {
    const double r = 1.0 - diff;
    return std::pair{r * r, -2.0 * r};
  });
}

/// Auxiliaries of the margin-based min-max AUC objective, one slot per objective.
struct AUCMState {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> alpha;
  std::vector<double> positive_rate;
  double margin = 1.0;

  /// Zeroed auxiliaries with positive rates frozen from the training labels.
  static AUCMState init(const BatchLabels& train, double margin = 1.0) {
    AUCMState s;
    const std::size_t m = train.num_objectives;
    s.a.assign(m, 0.0);
    s.b.assign(m, 0.0);
    s.alpha.assign(m, 0.0);
    s.margin = margin;
    for (std::size_t j = 0; j < m; ++j) {
      s.positive_rate.push_back(static_cast<double>(train.positives(j)) / static_cast<double>(train.size()));
    }
    return s;
  }

  /// Objectives excluded because their positive rate is 0 or 1.
  std::vector<std::size_t> excluded() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < positive_rate.size(); ++j) {
      if (!(positive_rate[j] > 0.0 && positive_rate[j] < 1.0)) out.push_back(j);
    }
    return out;
  }
};

struct AucmGradients {
  std::vector<double> a, b, alpha;
};

/// Value and gradients of the min-max objective at fixed auxiliaries.
inline LossResult aucm_objective(std::span<const double> scores, const BatchLabels& batch,
                                 const LossWeights& weights, const AUCMState& state,
                                 AucmGradients* aux_grad = nullptr) {
  detail::require_rows(scores, batch);
  weights.validate(batch.num_objectives);
  const std::size_t n = scores.size();
  const std::size_t num_obj = batch.num_objectives;
  if (state.a.size() != num_obj || state.positive_rate.size() != num_obj) {
    throw std::invalid_argument("aucm: state does not match objective count");
  }
  LossResult out;
  out.grad.assign(n, 0.0);
  if (aux_grad) {
    *aux_grad = {std::vector<double>(num_obj, 0.0), std::vector<double>(num_obj, 0.0),
                 std::vector<double>(num_obj, 0.0)};
  }
  for (std::size_t m = 0; m < num_obj; ++m) {
    const double p = state.positive_rate[m];
    if (!(p > 0.0 && p < 1.0)) continue;
    const double np = static_cast<double>(batch.positives(m));
    const double nn = static_cast<double>(n) - np;
    if (np == 0.0 || nn == 0.0) continue;
    const double a = state.a[m], b = state.b[m], alpha = state.alpha[m], w = weights.at(m);
    double sq_pos = 0.0, sq_neg = 0.0, mean_pos = 0.0, mean_neg = 0.0, dev_pos = 0.0, dev_neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = scores[i];
      if (batch(i, m)) {
        sq_pos += (s - a) * (s - a);
        dev_pos += s - a;
        mean_pos += s;
      } else {
        sq_neg += (s - b) * (s - b);
        dev_neg += s - b;
        mean_neg += s;
      }
    }
    sq_pos /= np;
    dev_pos /= np;
    mean_pos /= np;
    sq_neg /= nn;
    dev_neg /= nn;
    mean_neg /= nn;
    // Expectations over all samples: each class term carries its frozen share.
    const double pq = p * (1.0 - p);
    const double coupling = state.margin + mean_neg - mean_pos;
    out.loss += w * pq * (sq_pos + sq_neg + 2.0 * alpha * coupling - alpha * alpha);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = scores[i];
      if (batch(i, m)) {
        out.grad[i] += w * pq * (2.0 * (s - a) - 2.0 * alpha) / np;
      } else {
        out.grad[i] += w * pq * (2.0 * (s - b) + 2.0 * alpha) / nn;
      }
    }
    if (aux_grad) {
      aux_grad->a[m] = -2.0 * w * pq * dev_pos;
      aux_grad->b[m] = -2.0 * w * pq * dev_neg;
      aux_grad->alpha[m] = 2.0 * w * pq * (coupling - alpha);
    }
  }
  return out;
}

/// One stochastic step: descent on (a, b), projected ascent on alpha. Returns
/// the loss and score gradient evaluated before the auxiliaries move.
inline LossResult aucm_step(std::span<const double> scores, const BatchLabels& batch, const LossWeights& weights,
                            AUCMState& state, double lr) {
  AucmGradients g;
  LossResult out = aucm_objective(scores, batch, weights, state, &g);
  for (std::size_t m = 0; m < state.a.size(); ++m) {
    state.a[m] -= lr * g.a[m];
    state.b[m] -= lr * g.b[m];
    state.alpha[m] = std::max(0.0, state.alpha[m] + lr * g.alpha[m]);
  }
  return out;
}

}  // namespace harmonrank
