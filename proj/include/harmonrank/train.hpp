#pragma once

// Mini-batch SGD over any of the supported losses.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "harmonrank/data.hpp"
#include "harmonrank/losses.hpp"
#include "harmonrank/model.hpp"
#include "harmonrank/softsort.hpp"

namespace harmonrank {

enum class LossKind { rank_auc, mbce, label_agg, pairwise_logistic, pairwise_square, aucm };

inline const std::vector<std::pair<LossKind, std::string>>& loss_names() {
  static const std::vector<std::pair<LossKind, std::string>> names = {
      {LossKind::rank_auc, "rank_auc"},
      {LossKind::mbce, "mbce"},
      {LossKind::label_agg, "label_agg"},
      {LossKind::pairwise_logistic, "pairwise_logistic"},
      {LossKind::pairwise_square, "pairwise_square"},
      {LossKind::aucm, "aucm"},
  };
  return names;
}

inline std::string to_string(LossKind k) {
  for (const auto& [kind, name] : loss_names()) {
    if (kind == k) return name;
  }
  return "unknown";
}

inline LossKind parse_loss(const std::string& s) {
  for (const auto& [kind, name] : loss_names()) {
    if (name == s) return kind;
  }
  throw std::invalid_argument("unknown loss '" + s + "'");
}

enum class TrainMode { offline, streaming };

struct TrainConfig {
  LossKind loss = LossKind::rank_auc;
  double lr = 1e-4;
  std::size_t batch_size = 10240;
  std::size_t epochs = 500;
  TrainMode mode = TrainMode::offline;
  std::size_t streaming_inner_epochs = 20;
  LossWeights weights;
  SoftRankConfig softrank;
  double momentum = 0.0;
  double aucm_margin = 1.0;
  PairNormalization pair_normalization = PairNormalization::mean;
  /// Evaluate on the test split every this many epochs (and after the last).
  std::size_t eval_every = 1;
  std::uint64_t seed = 1;

  void validate() const {
    require(lr >= 0.0 && std::isfinite(lr), "train: lr must be non-negative");
    require(epochs >= 1, "train: epochs must be at least 1");
    require(batch_size >= 1, "train: batch size must be positive");
    require(streaming_inner_epochs >= 1, "train: streaming_inner_epochs must be at least 1");
    require(momentum >= 0.0 && momentum < 1.0, "train: momentum must lie in [0,1)");
    require(eval_every >= 1, "train: eval_every must be at least 1");
    validate_softrank();
  }

 private:
  void validate_softrank() const { harmonrank::validate(softrank); }
};

/// SplitMix64 finalizer; derives independent sub-stream seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace seed_stream {
inline constexpr std::uint64_t data = 1;
inline constexpr std::uint64_t model = 2;
inline constexpr std::uint64_t train = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t analysis = 5;
}  // namespace seed_stream

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<AUCReport> test;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
  std::size_t updates = 0;
  BceHeads heads;
  std::optional<AUCMState> aucm;
};

inline AUCReport evaluate(const Model& model, const ModelParams& params, const Dataset& ds) {
  const std::vector<double> s = model.predict(ds.inputs(), params);
  return auc_report(s, ds.labels());
}

/// Loss-side state that persists across steps (BCE heads, AUCM auxiliaries).
class LossDriver {
 public:
  LossDriver(const TrainConfig& cfg, const Dataset& train) : cfg_(cfg) {
    const std::size_t m = train.num_objectives();
    if (cfg.loss == LossKind::mbce) heads_ = BceHeads::identity(m);
    if (cfg.loss == LossKind::aucm) aucm_ = AUCMState::init(train.labels(), cfg.aucm_margin);
  }

  /// Loss and score gradient; loss-local parameters take their own SGD step.
  LossResult step(std::span<const double> scores, const BatchLabels& labels) {
    switch (cfg_.loss) {
      case LossKind::rank_auc:
        return rank_auc_loss(scores, labels, cfg_.weights, cfg_.softrank);
      case LossKind::mbce: {
        MbceResult r = mbce_loss(scores, labels, cfg_.weights, heads_);
        for (std::size_t m = 0; m < heads_.scale.size(); ++m) {
          heads_.scale[m] -= cfg_.lr * r.grad_heads.scale[m];
          heads_.bias[m] -= cfg_.lr * r.grad_heads.bias[m];
        }
        return {r.loss, std::move(r.grad_scores)};
      }
      case LossKind::label_agg:
        return label_agg_loss(scores, labels, cfg_.weights);
      case LossKind::pairwise_logistic:
        return pairwise_logistic_loss(scores, labels, cfg_.weights, cfg_.pair_normalization);
      case LossKind::pairwise_square:
        return pairwise_square_loss(scores, labels, cfg_.weights, cfg_.pair_normalization);
      case LossKind::aucm:
        return aucm_step(scores, labels, cfg_.weights, *aucm_, cfg_.lr);
    }
    throw std::logic_error("unhandled loss");
  }

  const BceHeads& heads() const { return heads_; }
  const std::optional<AUCMState>& aucm() const { return aucm_; }

 private:
  TrainConfig cfg_;
  BceHeads heads_;
  std::optional<AUCMState> aucm_;
};

class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void apply(ModelParams& params, ModelParams& grad) {
    if (momentum_ > 0.0 && velocity_.empty()) {
      grad.for_each([&](const std::string&, const Matrix& g) { velocity_.emplace_back(g.rows(), g.cols()); });
    }
    std::size_t idx = 0;
    std::vector<Matrix*> targets;
    params.for_each([&](const std::string&, Matrix& p) { targets.push_back(&p); });
    grad.for_each([&](const std::string&, Matrix& g) {
      Matrix& p = *targets[idx];
      if (momentum_ > 0.0) {
        Matrix& v = velocity_[idx];
        for (std::size_t i = 0; i < g.size(); ++i) {
          v[i] = momentum_ * v[i] + g[i];
          p[i] -= lr_ * v[i];
        }
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) p[i] -= lr_ * g[i];
      }
      ++idx;
    });
    ++params.version;
  }

 private:
  double lr_;
  double momentum_;
  std::vector<Matrix> velocity_;
};

namespace detail {

struct BatchView {
  std::vector<double> scores;
  std::vector<std::uint32_t> features;
  BatchLabels labels;
  std::size_t rows = 0;

  ModelInputs inputs() const { return {scores, features, rows}; }
};

inline BatchView gather(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t m = ds.num_objectives(), f = ds.num_features();
  BatchView b;
  b.rows = idx.size();
  b.scores.reserve(idx.size() * m);
  b.features.reserve(idx.size() * f);
  b.labels.num_objectives = m;
  b.labels.objective_names = ds.schema().objectives;
  b.labels.labels.reserve(idx.size() * m);
  for (std::size_t i : idx) {
    for (std::size_t j = 0; j < m; ++j) {
      b.scores.push_back(ds.score(i, j));
      b.labels.labels.push_back(ds.label(i, j));
    }
    for (std::size_t h = 0; h < f; ++h) b.features.push_back(ds.feature(i, h));
  }
  return b;
}

}  // namespace detail

/// Trains from a fresh initialization derived from cfg.seed.
inline TrainResult train(const Dataset& train_set, const Dataset* test_set, const ModelConfig& model_config,
                         const TrainConfig& cfg) {
  cfg.validate();
  require(train_set.size() >= 1, "train: empty training set");
  require(train_set.num_objectives() == model_config.num_objectives, "train: objective count differs from model");
  cfg.weights.validate(model_config.num_objectives);
  const Model model(model_config);
  TrainResult result;
  result.params = init_params(model_config, mix_seed(cfg.seed, seed_stream::model));
  LossDriver driver(cfg, train_set);
  SgdOptimizer opt(cfg.lr, cfg.momentum);

  auto run_batch = [&](const detail::BatchView& b, std::size_t epoch) {
    const ForwardTrace tr = model.forward(b.inputs(), result.params);
    auto diverged = [&](const char* what) {
      return std::runtime_error(std::string("train: non-finite ") + what + " (" + to_string(cfg.loss) + ") at epoch " +
                                std::to_string(epoch) + ", update " + std::to_string(result.updates));
    };
    for (double s : tr.scores()) {
      if (!std::isfinite(s)) throw diverged("score");
    }
    LossResult lr = driver.step(tr.scores(), b.labels);
    if (!std::isfinite(lr.loss)) throw diverged("loss");
    ModelParams grad = model.backward(tr, lr.grad, result.params);
    opt.apply(result.params, grad);
    ++result.updates;
    return lr.loss;
  };

  auto record = [&](std::size_t epoch, double loss, bool last) {
    EpochRecord rec{epoch, loss, std::nullopt};
    if (test_set && (epoch % cfg.eval_every == 0 || last)) rec.test = evaluate(model, result.params, *test_set);
    result.history.push_back(std::move(rec));
  };

  if (cfg.mode == TrainMode::offline) {
    const std::uint64_t shuffle_base = mix_seed(cfg.seed, seed_stream::train);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
      const auto slices = batches(train_set.size(), cfg.batch_size, mix_seed(shuffle_base, epoch));
      double total = 0.0;
      for (const auto& idx : slices) total += run_batch(detail::gather(train_set, idx), epoch);
      record(epoch, total / static_cast<double>(slices.size()), epoch == cfg.epochs);
    }
  } else {
    // Chunks arrive in generation order; each is replayed before moving on.
    const auto chunks = batches(train_set.size(), cfg.batch_size, 0);
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const detail::BatchView b = detail::gather(train_set, chunks[c]);
      double total = 0.0;
      for (std::size_t r = 0; r < cfg.streaming_inner_epochs; ++r) total += run_batch(b, c + 1);
      record(c + 1, total / static_cast<double>(cfg.streaming_inner_epochs), c + 1 == chunks.size());
    }
  }
  result.heads = driver.heads();
  result.aucm = driver.aucm();
  return result;
}

}  // namespace harmonrank
