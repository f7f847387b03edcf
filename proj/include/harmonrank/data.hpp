#pragma once

// Synthetic impression logs, CSV persistence, splitting and batching.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "harmonrank/losses.hpp"
#include "harmonrank/matrix.hpp"
#include "harmonrank/model.hpp"
#include "harmonrank/numeric.hpp"

namespace harmonrank {

struct Schema {
  std::vector<std::string> objectives;
  std::vector<PersonalizedFeature> features;

  friend bool operator==(const Schema&, const Schema&) = default;
};

/// One impression, owning its values.
struct Sample {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint32_t> features;
};

/// Column-flat sample store: scores and labels are N x M, features N x F.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(Schema schema) : schema_(std::move(schema)) {}

  const Schema& schema() const { return schema_; }
  std::size_t size() const { return num_objectives() == 0 ? 0 : scores_.size() / num_objectives(); }
  std::size_t num_objectives() const { return schema_.objectives.size(); }
  std::size_t num_features() const { return schema_.features.size(); }

  void add(const Sample& s) {
    require(s.scores.size() == num_objectives() && s.labels.size() == num_objectives(), "dataset: objective count");
    require(s.features.size() == num_features(), "dataset: feature count");
    for (double v : s.scores) require(std::isfinite(v) && v >= 0.0 && v <= 1.0, "dataset: score outside [0,1]");
    for (std::uint8_t y : s.labels) require(y <= 1, "dataset: label outside {0,1}");
    for (std::size_t h = 0; h < s.features.size(); ++h) {
      require(s.features[h] < schema_.features[h].cardinality, "dataset: feature id exceeds cardinality");
    }
    scores_.insert(scores_.end(), s.scores.begin(), s.scores.end());
    labels_.insert(labels_.end(), s.labels.begin(), s.labels.end());
    features_.insert(features_.end(), s.features.begin(), s.features.end());
  }

  Sample sample(std::size_t i) const {
    const std::size_t m = num_objectives(), f = num_features();
    return {{scores_.begin() + i * m, scores_.begin() + (i + 1) * m},
            {labels_.begin() + i * m, labels_.begin() + (i + 1) * m},
            {features_.begin() + i * f, features_.begin() + (i + 1) * f}};
  }

  double score(std::size_t i, std::size_t m) const { return scores_[i * num_objectives() + m]; }
  std::uint8_t label(std::size_t i, std::size_t m) const { return labels_[i * num_objectives() + m]; }
  std::uint32_t feature(std::size_t i, std::size_t h) const { return features_[i * num_features() + h]; }

  std::span<const double> scores() const { return scores_; }
  std::span<const std::uint32_t> features() const { return features_; }

  ModelInputs inputs() const { return {scores_, features_, size()}; }

  BatchLabels labels() const {
    BatchLabels b;
    b.num_objectives = num_objectives();
    b.labels = labels_;
    b.objective_names = schema_.objectives;
    return b;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out(schema_);
    const std::size_t m = num_objectives(), f = num_features();
    out.scores_.reserve(idx.size() * m);
    out.labels_.reserve(idx.size() * m);
    out.features_.reserve(idx.size() * f);
    for (std::size_t i : idx) {
      require(i < size(), "dataset: index out of range");
      out.scores_.insert(out.scores_.end(), scores_.begin() + i * m, scores_.begin() + (i + 1) * m);
      out.labels_.insert(out.labels_.end(), labels_.begin() + i * m, labels_.begin() + (i + 1) * m);
      out.features_.insert(out.features_.end(), features_.begin() + i * f, features_.begin() + (i + 1) * f);
    }
    return out;
  }

  std::size_t positives(std::size_t m) const {
    std::size_t p = 0;
    for (std::size_t i = 0; i < size(); ++i) p += label(i, m);
    return p;
  }

  double positive_rate(std::size_t m) const {
    return size() == 0 ? 0.0 : static_cast<double>(positives(m)) / static_cast<double>(size());
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  Schema schema_;
  std::vector<double> scores_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::uint32_t> features_;
};

/// Categorical feature observed through a noisy projection of the latent state.
struct FeatureSpec {
  std::string name;
  std::size_t cardinality = 4;
  /// Correlation between the feature's pre-quantization value and its latent projection.
  double dependence = 0.5;
  /// Projection direction in latent space (length k).
  std::vector<double> direction;
};

struct GeneratorSpec {
  std::size_t num_samples = 1000;
  std::vector<std::string> objectives;
  std::size_t latent_dim = 4;
  Matrix loading;                    // M x k, row m is the affinity vector a_m
  std::vector<double> objective_bias;  // M
  double score_noise_sd = 0.5;
  double label_noise_sd = 0.0;
  std::vector<FeatureSpec> features;
  std::uint64_t seed = 1;

  std::size_t num_objectives() const { return objectives.size(); }

  void validate() const {
    require(num_samples >= 1, "generator: N must be at least 1");
    require(!objectives.empty(), "generator: need at least one objective");
    require(latent_dim >= 1, "generator: latent_dim must be at least 1");
    require(loading.rows() == objectives.size() && loading.cols() == latent_dim,
            "generator: loading matrix must be M x latent_dim");
    require(objective_bias.size() == objectives.size(), "generator: one bias per objective");
    require(score_noise_sd >= 0.0 && label_noise_sd >= 0.0, "generator: noise must be non-negative");
    for (double v : loading.data()) require(std::isfinite(v), "generator: non-finite loading");
    for (double b : objective_bias) require(std::isfinite(b), "generator: non-finite bias");
    for (const auto& f : features) {
      require(f.cardinality >= 2, "generator: feature cardinality must be at least 2");
      require(f.dependence >= 0.0 && f.dependence <= 1.0, "generator: dependence must lie in [0,1]");
      require(f.direction.size() == latent_dim, "generator: feature direction must have latent_dim entries");
    }
  }

  Schema schema() const {
    Schema s{objectives, {}};
    for (const auto& f : features) s.features.push_back({f.name, f.cardinality});
    return s;
  }
};

namespace detail {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace detail

/// E[sigmoid(b + sd * Z)] for standard normal Z, by midpoint quadrature on [-8, 8].
inline double expected_positive_rate(double bias, double sd) {
  if (sd == 0.0) return sigmoid(bias);
  constexpr int steps = 4000;
  const double h = 16.0 / steps;
  double total = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double z = -8.0 + (i + 0.5) * h;
    total += sigmoid(bias + sd * z) * std::exp(-0.5 * z * z);
  }
  return total * h / std::sqrt(2.0 * std::acos(-1.0));
}

/// Bias that yields the requested expected positive rate for logit spread sd.
inline double bias_for_rate(double rate, double sd) {
  require(rate > 0.0 && rate < 1.0, "bias_for_rate: rate must lie in (0,1)");
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (expected_positive_rate(mid, sd) < rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// logit_m = a_m . z + bias_m; label ~ Bernoulli(sigmoid(logit + label noise));
/// upstream score = sigmoid(logit + score noise).
inline Dataset generate(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t m = spec.num_objectives(), k = spec.latent_dim;
  Dataset ds(spec.schema());
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> z(k);
  Sample s;
  s.scores.resize(m);
  s.labels.resize(m);
  s.features.resize(spec.features.size());
  for (std::size_t i = 0; i < spec.num_samples; ++i) {
    for (double& v : z) v = normal(rng);
    for (std::size_t j = 0; j < m; ++j) {
      double logit = spec.objective_bias[j];
      for (std::size_t c = 0; c < k; ++c) logit += spec.loading(j, c) * z[c];
      const double label_noise = spec.label_noise_sd * normal(rng);
      const double score_noise = spec.score_noise_sd * normal(rng);
      s.labels[j] = unit(rng) < sigmoid(logit + label_noise) ? 1 : 0;
      s.scores[j] = sigmoid(logit + score_noise);
    }
    for (std::size_t h = 0; h < spec.features.size(); ++h) {
      const FeatureSpec& f = spec.features[h];
      double norm = 0.0, proj = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        norm += f.direction[c] * f.direction[c];
        proj += f.direction[c] * z[c];
      }
      proj = norm > 0.0 ? proj / std::sqrt(norm) : 0.0;
      const double value = f.dependence * proj + std::sqrt(1.0 - f.dependence * f.dependence) * normal(rng);
      const auto bin = static_cast<std::size_t>(detail::normal_cdf(value) * static_cast<double>(f.cardinality));
      s.features[h] = static_cast<std::uint32_t>(std::min(bin, f.cardinality - 1));
    }
    ds.add(s);
  }
  return ds;
}

/// Keeps every negative of `objective` and a uniform subset of its positives so
/// that positives / negatives equals target_ratio (rounded to a whole sample).
inline Dataset downsample_positives(const Dataset& ds, std::size_t objective, double target_ratio, std::uint64_t seed) {
  require(objective < ds.num_objectives(), "downsample: objective out of range");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.label(i, objective) ? pos : neg).push_back(i);
  require(!neg.empty() && !pos.empty(), "downsample: objective needs both classes");
  const double current = static_cast<double>(pos.size()) / static_cast<double>(neg.size());
  const auto keep = static_cast<std::size_t>(std::llround(target_ratio * static_cast<double>(neg.size())));
  if (!(target_ratio > 0.0) || keep > pos.size() || keep == 0) {
    throw std::invalid_argument("downsample: target ratio " + std::to_string(target_ratio) +
                                " unattainable (current " + std::to_string(current) + ")");
  }
  if (keep == pos.size()) return ds;
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  pos.resize(keep);
  std::vector<std::size_t> idx = neg;
  idx.insert(idx.end(), pos.begin(), pos.end());
  std::sort(idx.begin(), idx.end());
  return ds.subset(idx);
}

struct Split {
  Dataset train;
  Dataset test;
};

/// Random disjoint cover; the test part holds round(fraction * N) samples.
inline Split split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw std::invalid_argument("split: fraction must lie in (0,1)");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

/// Contiguous split in generation order: the first `train_size` samples train.
inline Split split_head(const Dataset& ds, std::size_t train_size) {
  require(train_size >= 1 && train_size < ds.size(), "split_head: train size out of range");
  std::vector<std::size_t> train(train_size), test(ds.size() - train_size);
  std::iota(train.begin(), train.end(), std::size_t{0});
  std::iota(test.begin(), test.end(), train_size);
  return {ds.subset(train), ds.subset(test)};
}

/// One epoch of index slices; a final short batch is kept. shuffle_seed == 0 keeps order.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t shuffle_seed) {
  require(batch_size >= 1, "batches: batch size must be positive");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (shuffle_seed != 0) {
    std::mt19937_64 rng(shuffle_seed);
    std::shuffle(idx.begin(), idx.end(), rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) {
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(b),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  cells.push_back(std::move(cur));
  return cells;
}

class CsvError : public std::invalid_argument {
 public:
  CsvError(std::size_t row, const std::string& what)
      : std::invalid_argument("csv row " + std::to_string(row) + ": " + what) {}
};

}  // namespace detail

/// Columns: score_<objective>..., label_<objective>..., feat_<feature>....
inline void save_csv(const Dataset& ds, std::ostream& out) {
  const Schema& sc = ds.schema();
  std::string header;
  auto push = [&](const std::string& cell) {
    if (!header.empty()) header += ',';
    header += cell;
  };
  for (const auto& o : sc.objectives) push("score_" + o);
  for (const auto& o : sc.objectives) push("label_" + o);
  for (const auto& f : sc.features) push("feat_" + f.name);
  out << header << '\n';
  std::string line;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line.clear();
    for (std::size_t m = 0; m < ds.num_objectives(); ++m) {
      if (!line.empty()) line += ',';
      line += detail::format_double(ds.score(i, m));
    }
    for (std::size_t m = 0; m < ds.num_objectives(); ++m) {
      line += ',';
      line += ds.label(i, m) ? '1' : '0';
    }
    for (std::size_t h = 0; h < ds.num_features(); ++h) {
      line += ',';
      line += std::to_string(ds.feature(i, h));
    }
    out << line << '\n';
  }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_csv(ds, out);
  if (!out) throw std::runtime_error("write failed: " + path);
}

/// Parses a dataset. Feature cardinalities come from `expected` when given,
/// otherwise from the largest id seen plus one.
inline Dataset load_csv(std::istream& in, const Schema* expected = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw detail::CsvError(1, "missing header");
  if (!line.empty() && line.back() == '\r') throw detail::CsvError(1, "CRLF line endings are not accepted");
  const std::vector<std::string> header = detail::split_csv_line(line);
  std::vector<std::string> objectives_s, objectives_l, features;
  std::vector<int> kind(header.size());  // 0 score, 1 label, 2 feature
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h.rfind("score_", 0) == 0) {
      kind[c] = 0;
      objectives_s.push_back(h.substr(6));
    } else if (h.rfind("label_", 0) == 0) {
      kind[c] = 1;
      objectives_l.push_back(h.substr(6));
    } else if (h.rfind("feat_", 0) == 0) {
      kind[c] = 2;
      features.push_back(h.substr(5));
    } else {
      throw detail::CsvError(1, "unknown column '" + h + "'");
    }
  }
  if (objectives_s != objectives_l) throw detail::CsvError(1, "score_ and label_ columns must name the same objectives");
  if (objectives_s.empty()) throw detail::CsvError(1, "no objective columns");

  Schema schema;
  schema.objectives = objectives_s;
  for (const auto& f : features) schema.features.push_back({f, 0});
  if (expected) {
    for (const auto& o : expected->objectives) {
      if (std::find(objectives_s.begin(), objectives_s.end(), o) == objectives_s.end()) {
        throw detail::CsvError(1, "missing column score_" + o);
      }
    }
    for (const auto& f : expected->features) {
      if (std::find(features.begin(), features.end(), f.name) == features.end()) {
        throw detail::CsvError(1, "missing column feat_" + f.name);
      }
    }
    if (expected->objectives != objectives_s) throw detail::CsvError(1, "objective columns differ from expected schema");
    if (expected->features.size() != features.size()) throw detail::CsvError(1, "feature columns differ from expected schema");
    schema.features = expected->features;
  }

  std::vector<Sample> rows;
  std::size_t row = 1;
  std::vector<std::uint32_t> max_id(features.size(), 0);
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    if (line.back() == '\r') throw detail::CsvError(row, "CRLF line endings are not accepted");
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw detail::CsvError(row, "expected " + std::to_string(header.size()) + " cells, got " +
                                      std::to_string(cells.size()));
    }
    Sample s;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const std::string& cell = cells[c];
      const char* b = cell.data();
      const char* e = b + cell.size();
      if (kind[c] == 0) {
        double v = 0.0;
        const auto res = std::from_chars(b, e, v);
        if (res.ec != std::errc() || res.ptr != e || cell.empty()) {
          throw detail::CsvError(row, "unparsable score '" + cell + "' in " + header[c]);
        }
        if (!(v >= 0.0 && v <= 1.0)) throw detail::CsvError(row, "score out of [0,1] in " + header[c]);
        s.scores.push_back(v);
      } else if (kind[c] == 1) {
        if (cell != "0" && cell != "1") throw detail::CsvError(row, "label must be 0 or 1 in " + header[c] + ", got '" + cell + "'");
        s.labels.push_back(cell == "1" ? 1 : 0);
      } else {
        std::uint32_t v = 0;
        const auto res = std::from_chars(b, e, v);
        if (res.ec != std::errc() || res.ptr != e || cell.empty()) {
          throw detail::CsvError(row, "unparsable feature id '" + cell + "' in " + header[c]);
        }
        const std::size_t h = s.features.size();
        if (expected && v >= schema.features[h].cardinality) {
          throw detail::CsvError(row, "feature id exceeds cardinality in " + header[c]);
        }
        max_id[h] = std::max(max_id[h], v);
        s.features.push_back(v);
      }
    }
    rows.push_back(std::move(s));
  }
  if (!expected) {
    for (std::size_t h = 0; h < features.size(); ++h) schema.features[h].cardinality = max_id[h] + 1;
  }
  Dataset ds(schema);
  for (const Sample& s : rows) ds.add(s);
  return ds;
}

inline Dataset load_csv(const std::string& path, const Schema* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_csv(in, expected);
}

}  // namespace harmonrank
