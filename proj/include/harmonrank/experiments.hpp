#pragma once

// Analysis suite: trade-off sweeps, attention/label alignment, label-skew
// robustness and loss throughput.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "harmonrank/data.hpp"
#include "harmonrank/losses.hpp"
#include "harmonrank/model.hpp"
#include "harmonrank/stats.hpp"
#include "harmonrank/train.hpp"

namespace harmonrank {

/// Five objectives with a planted overlap ladder against the first ("buy"),
/// positive rates between 1:20 and 1:200, and three categorical user features.
inline GeneratorSpec standard_generator_spec(std::uint64_t seed, std::size_t num_samples = 60000) {
  GeneratorSpec g;
  g.num_samples = num_samples;
  g.objectives = {"buy", "comment", "long_view", "follow", "like"};
  g.latent_dim = 6;
  g.loading = Matrix(5, 6);
  constexpr double strength = 2.0;
  const double overlap[5] = {1.0, 0.8, 0.6, 0.4, 0.2};
  // pos:neg of 1:200, 1:100, 1:20, 1:150, 1:40
  const double rates[5] = {1.0 / 201, 1.0 / 101, 1.0 / 21, 1.0 / 151, 1.0 / 41};
  for (std::size_t m = 0; m < 5; ++m) {
    g.loading(m, 0) = strength * overlap[m];
    if (m > 0) g.loading(m, m) = strength * std::sqrt(1.0 - overlap[m] * overlap[m]);
    g.objective_bias.push_back(bias_for_rate(rates[m], strength));
  }
  g.score_noise_sd = 1.0;
  g.label_noise_sd = 0.0;
  g.features = {{"age", 8, 0.6, {1, 0, 0, 0, 0, 0}},
                {"gender", 2, 0.6, {0, 0, 0, 1, 0, 0}},
                {"region", 8, 0.6, {0, 0, 0, 0, 1, 1}}};
  g.seed = seed;
  return g;
}

// ---------------------------------------------------------------------------
// Pareto sweeps

struct ParetoPoint {
  std::vector<double> weights;
  std::vector<double> auc;  // NaN where the objective was absent
  bool on_front = false;
};

/// a dominates b: >= everywhere and > somewhere.
inline bool dominates(const std::vector<double>& a, const std::vector<double>& b) {
  bool strictly = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] >= b[i])) return false;
    if (a[i] > b[i]) strictly = true;
  }
  return strictly;
}

inline void mark_pareto_front(std::vector<ParetoPoint>& points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    points[i].on_front = true;
    for (std::size_t j = 0; j < points.size() && points[i].on_front; ++j) {
      if (i != j && dominates(points[j].auc, points[i].auc)) points[i].on_front = false;
    }
  }
}

inline std::vector<double> auc_values(const AUCReport& r) {
  std::vector<double> out;
  for (const auto& v : r.per_objective) out.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
  return out;
}

inline std::vector<ParetoPoint> pareto_sweep(const Dataset& train_set, const Dataset& test_set,
                                             const ModelConfig& model_config, const TrainConfig& cfg,
                                             const std::vector<std::vector<double>>& weight_grid) {
  if (weight_grid.empty()) throw std::invalid_argument("pareto_sweep: empty weight grid");
  std::vector<ParetoPoint> points;
  const Model model(model_config);
  for (const auto& w : weight_grid) {
    TrainConfig c = cfg;
    c.weights = {w};
    c.eval_every = c.epochs;
    const TrainResult r = train(train_set, nullptr, model_config, c);
    points.push_back({w, auc_values(evaluate(model, r.params, test_set)), false});
  }
  mark_pareto_front(points);
  return points;
}

// ---------------------------------------------------------------------------
// Inter-objective alignment

struct AnalysisResult {
  Matrix rho;        // label Spearman, NaN where undefined
  Matrix attention;  // dataset mean of sigmoid(Q_r K_r^T / sqrt(dk))
  double pearson_r = std::numeric_limits<double>::quiet_NaN();
  double p_value = 1.0;
  std::size_t pairs = 0;
};

inline Matrix label_spearman(const Dataset& ds) {
  const std::size_t m = ds.num_objectives();
  const BatchLabels labels = ds.labels();
  std::vector<std::vector<double>> cols(m);
  for (std::size_t j = 0; j < m; ++j) {
    const auto c = labels.column(j);
    cols[j].assign(c.begin(), c.end());
  }
  Matrix rho(m, m, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a; b < m; ++b) {
      const auto r = spearman<double>(cols[a], cols[b]);
      if (r) rho(a, b) = rho(b, a) = (a == b ? 1.0 : *r);
    }
  }
  return rho;
}

struct AnalysisOptions {
  /// Restrict the correlation to this objective's row; all off-diagonal entries otherwise.
  std::optional<std::size_t> anchor;
  std::size_t shuffles = 10000;
  std::uint64_t seed = 1;
};

inline AnalysisResult attention_analysis(const Model& model, const ModelParams& params, const Dataset& ds,
                                         const AnalysisOptions& opt = {}) {
  const ModelConfig& c = model.config();
  require(c.ablation.self_attention, "attention_analysis: model has no self-attention");
  require(ds.num_objectives() == c.num_objectives, "attention_analysis: objective count mismatch");
  require(ds.size() >= 1, "attention_analysis: empty dataset");
  const std::size_t m = c.num_objectives, dk = c.key_dim;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

  AnalysisResult out;
  out.rho = label_spearman(ds);
  out.attention = Matrix(m, m);
  const ModelInputs all = ds.inputs();
  const std::size_t f = ds.num_features();
  constexpr std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < ds.size(); begin += chunk) {
    const std::size_t rows = std::min(chunk, ds.size() - begin);
    const ModelInputs part{all.scores.subspan(begin * m, rows * m), all.features.subspan(begin * f, rows * f), rows};
    const ForwardTrace tr = model.forward(part, params);
    for (std::size_t i = 0; i < rows; ++i) {
      const auto q = tr.queries(i);
      const auto k = tr.keys(i);
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
          double logit = 0.0;
          for (std::size_t h = 0; h < dk; ++h) logit += q[a * dk + h] * k[b * dk + h];
          out.attention(a, b) += sigmoid(logit * inv_sqrt);
        }
      }
    }
  }
  for (double& v : out.attention.data()) v /= static_cast<double>(ds.size());

  std::vector<double> xs, ys;
  for (std::size_t a = 0; a < m; ++a) {
    if (opt.anchor && *opt.anchor != a) continue;
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b || std::isnan(out.rho(a, b))) continue;
      xs.push_back(out.rho(a, b));
      ys.push_back(out.attention(a, b));
    }
  }
  out.pairs = xs.size();
  if (const auto r = pearson(xs, ys)) {
    out.pearson_r = *r;
    out.p_value = pearson_permutation_p(xs, ys, opt.shuffles, opt.seed);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Label skew

struct SkewRow {
  std::string loss;
  double factor = 1.0;  // extra positive downsampling of the skewed objective
  double auc_sum = 0.0;
  double rel_drop_pct = 0.0;  // 100 (base - auc_sum) / base
};

/// Most skewed objective: lowest positive rate.
inline std::size_t most_skewed_objective(const Dataset& ds) {
  std::size_t best = 0;
  for (std::size_t m = 1; m < ds.num_objectives(); ++m) {
    if (ds.positive_rate(m) < ds.positive_rate(best)) best = m;
  }
  return best;
}

/// Training set with the objective's positives thinned `factor` times further.
inline Dataset skewed_train_set(const Dataset& train_set, std::size_t objective, double factor, std::uint64_t seed) {
  require(factor >= 1.0, "skew: factor must be >= 1");
  if (factor == 1.0) return train_set;
  const double pos = static_cast<double>(train_set.positives(objective));
  const double current = pos / (static_cast<double>(train_set.size()) - pos);
  return downsample_positives(train_set, objective, current / factor, mix_seed(seed, seed_stream::split + 100));
}

inline std::vector<SkewRow> skew_experiment(const Dataset& train_set, const Dataset& test_set,
                                            const ModelConfig& model_config, const TrainConfig& cfg,
                                            const std::vector<double>& factors, const std::vector<LossKind>& losses,
                                            std::optional<std::size_t> objective = std::nullopt) {
  require(!factors.empty() && !losses.empty(), "skew_experiment: need factors and losses");
  for (double f : factors) require(f >= 1.0, "skew_experiment: factors must be >= 1");
  const std::size_t obj = objective.value_or(most_skewed_objective(train_set));
  const Model model(model_config);
  std::vector<SkewRow> rows;
  for (LossKind loss : losses) {
    TrainConfig c = cfg;
    c.loss = loss;
    c.eval_every = c.epochs;
    auto run = [&](double factor) {
      const TrainResult r = train(skewed_train_set(train_set, obj, factor, cfg.seed), nullptr, model_config, c);
      return evaluate(model, r.params, test_set).sum;
    };
    const double base = run(1.0);
    for (double factor : factors) {
      const double sum = factor == 1.0 ? base : run(factor);
      rows.push_back({to_string(loss), factor, sum, 100.0 * (base - sum) / base});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Throughput

struct BenchRow {
  std::string loss;
  std::size_t n = 0;
  double samples_per_sec = 0.0;
  /// time(n) / time(previous n in the list); NaN on the first row of a loss.
  double growth_ratio = std::numeric_limits<double>::quiet_NaN();
};

struct BenchOptions {
  std::size_t num_objectives = 3;
  double positive_rate = 0.05;
  std::size_t repeats = 5;
  std::size_t warmup = 1;
  SoftRankConfig softrank{1e-3};
  std::uint64_t seed = 1;
};

/// Median wall time of one loss forward + backward on a random batch.
inline double time_loss(LossKind loss, std::size_t n, const BenchOptions& opt) {
  std::mt19937_64 rng(mix_seed(opt.seed, n));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(opt.positive_rate);
  std::vector<double> scores(n);
  for (double& s : scores) s = normal(rng);
  BatchLabels labels(n, opt.num_objectives);
  for (auto& y : labels.labels) y = coin(rng) ? 1 : 0;
  const LossWeights w = LossWeights::uniform(opt.num_objectives);
  BceHeads heads = BceHeads::identity(opt.num_objectives);
  AUCMState state = AUCMState::init(labels);

  volatile double sink = 0.0;
  auto once = [&] {
    switch (loss) {
      case LossKind::rank_auc: sink = sink + rank_auc_loss(scores, labels, w, opt.softrank).grad[0]; break;
      case LossKind::mbce: sink = sink + mbce_loss(scores, labels, w, heads).grad_scores[0]; break;
      case LossKind::label_agg: sink = sink + label_agg_loss(scores, labels, w).grad[0]; break;
      case LossKind::pairwise_logistic: sink = sink + pairwise_logistic_loss(scores, labels, w).grad[0]; break;
      case LossKind::pairwise_square: sink = sink + pairwise_square_loss(scores, labels, w).grad[0]; break;
      case LossKind::aucm: sink = sink + aucm_step(scores, labels, w, state, 0.0).grad[0]; break;
    }
  };
  for (std::size_t i = 0; i < opt.warmup; ++i) once();
  std::vector<double> times;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.repeats); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    once();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(times.size() / 2), times.end());
  return times[times.size() / 2];
}

inline std::vector<BenchRow> bench_losses(const std::vector<std::size_t>& n_values,
                                          const std::vector<LossKind>& losses, const BenchOptions& opt = {}) {
  std::vector<BenchRow> rows;
  for (LossKind loss : losses) {
    double previous = 0.0;
    for (std::size_t i = 0; i < n_values.size(); ++i) {
      const double t = time_loss(loss, n_values[i], opt);
      BenchRow row{to_string(loss), n_values[i], static_cast<double>(n_values[i]) / t};
      if (i > 0) row.growth_ratio = t / previous;
      previous = t;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace harmonrank
