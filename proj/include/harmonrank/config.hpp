#pragma once

// Sectioned key-value run configuration (INI syntax, '#' or ';' comments).
// Every key has a default; unknown sections or keys are rejected. Command-line
// overrides of the form section.key=value are applied after the file.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "harmonrank/data.hpp"
#include "harmonrank/experiments.hpp"
#include "harmonrank/model.hpp"
#include "harmonrank/train.hpp"

namespace harmonrank {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ConfigKey {
  std::string default_value;
  std::string doc;
};

/// Every recognized key with its default and a one-line description.
inline const std::map<std::string, std::map<std::string, ConfigKey>>& config_schema() {
  static const std::map<std::string, std::map<std::string, ConfigKey>> schema = {
      {"run",
       {
           {"seed", {"1", "global seed; data, model and shuffling use derived sub-streams"}},
       }},
      {"data",
       {
           {"preset", {"standard", "standard | custom"}},
           {"samples", {"60000", "number of generated impressions"}},
           {"test_fraction", {"0.1666666666666667", "held-out fraction of the generated data"}},
           {"objectives", {"", "custom: comma-separated objective names"}},
           {"latent_dim", {"4", "custom: latent dimension k"}},
           {"loading", {"", "custom: M rows separated by ';', k comma-separated entries each"}},
           {"positive_rates", {"", "custom: target positive rate per objective (sets the biases)"}},
           {"bias", {"", "custom: explicit logit bias per objective (overrides positive_rates)"}},
           {"score_noise_sd", {"1.0", "custom: std-dev of upstream score noise on the logit scale"}},
           {"label_noise_sd", {"0.0", "custom: std-dev of label noise on the logit scale"}},
           {"features", {"", "custom: comma-separated name:cardinality:dependence:d1 d2 ... dk"}},
       }},
      {"model",
       {
           {"buckets", {"300", "discretization buckets per objective"}},
           {"embed_dim", {"8", "embedding width d"}},
           {"key_dim", {"8", "attention key width"}},
           {"feature_dim", {"4", "embedding width per personalized feature"}},
           {"self_attention", {"true", "ablation switch"}},
           {"cross_attention", {"true", "ablation switch (false: concatenation variant)"}},
           {"personalized", {"true", "ablation switch"}},
           {"gate", {"true", "ablation switch"}},
           {"linear_path", {"true", "ablation switch"}},
           {"relation_aware_path", {"true", "module switch for s1"}},
           {"gated_path", {"true", "module switch for s2"}},
           {"linear_path_input", {"raw_scores", "raw_scores | embeddings"}},
           {"embedding_init_sd", {"", "std-dev of the normal embedding initialization (empty: 1/sqrt(width))"}},
       }},
      {"train",
       {
           {"loss", {"rank_auc", "rank_auc | mbce | label_agg | pairwise_logistic | pairwise_square | aucm"}},
           {"lr", {"1e-4", "SGD learning rate"}},
           {"batch_size", {"10240", "mini-batch size"}},
           {"epochs", {"500", "offline passes over the training split"}},
           {"mode", {"offline", "offline | streaming"}},
           {"streaming_inner_epochs", {"20", "replays of each streaming chunk"}},
           {"weights", {"", "comma-separated loss weight per objective (empty: all 1)"}},
           {"epsilon", {"1.0", "soft-rank regularization strength"}},
           {"momentum", {"0", "SGD momentum (0: plain SGD)"}},
           {"aucm_margin", {"1.0", "margin of the AUCM objective"}},
           {"pairwise_normalization", {"mean", "mean | sum over positive-negative pairs"}},
           {"eval_every", {"1", "test evaluation period in epochs"}},
       }},
      {"sweep",
       {
           {"weights", {"", "';'-separated weight vectors, each comma-separated"}},
       }},
      {"analysis",
       {
           {"anchor", {"", "objective name whose row is correlated (empty: all off-diagonal entries)"}},
           {"shuffles", {"10000", "permutations for the p-value"}},
       }},
      {"skew",
       {
           {"factors", {"1,10", "extra positive downsampling factors (1 = original)"}},
           {"losses", {"rank_auc,mbce", "losses to compare"}},
           {"objective", {"", "objective to downsample (empty: most skewed)"}},
       }},
      {"bench",
       {
           {"n_values", {"1024,4096,16384", "batch sizes"}},
           {"losses", {"mbce,pairwise_logistic,aucm,rank_auc", "losses to time"}},
           {"repeats", {"5", "timed repetitions (median reported)"}},
           {"objectives", {"3", "objectives in the random batches"}},
           {"positive_rate", {"0.05", "positive rate of the random labels"}},
           {"epsilon", {"1e-3", "soft-rank regularization for rank_auc"}},
       }},
  };
  return schema;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& [section, keys] : config_schema()) {
      for (const auto& [key, spec] : keys) values_[section + "." + key] = spec.default_value;
    }
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    return from_stream(in);
  }

  static RunConfig from_string(const std::string& text) {
    std::istringstream in(text);
    return from_stream(in);
  }

  static RunConfig from_stream(std::istream& in) {
    RunConfig rc;
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& [section, node] : tree) {
      if (!node.data().empty()) throw ConfigError("config: key '" + section + "' outside of a section");
      for (const auto& [key, leaf] : node) {
        std::string value = leaf.get_value<std::string>();
        value = value.substr(0, value.find('#'));
        rc.set(section, key, value);
      }
    }
    return rc;
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    const auto& schema = config_schema();
    const auto s = schema.find(section);
    if (s == schema.end()) throw ConfigError("config: unknown section [" + section + "]");
    if (!s->second.contains(key)) throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
    values_[section + "." + key] = detail::trim(value);
  }

  /// Applies "section.key=value".
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("config: override must look like section.key=value, got '" + assignment + "'");
    }
    set(assignment.substr(0, dot), assignment.substr(dot + 1, eq - dot - 1), assignment.substr(eq + 1));
  }

  const std::string& get(const std::string& dotted) const {
    const auto it = values_.find(dotted);
    if (it == values_.end()) throw std::logic_error("config: unregistered key " + dotted);
    return it->second;
  }

  double number(const std::string& dotted) const {
    const std::string& v = get(dotted);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: " + dotted + " must be a number, got '" + v + "'");
    }
  }

  std::size_t count(const std::string& dotted) const {
    const double d = number(dotted);
    if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
      throw ConfigError("config: " + dotted + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(d);
  }

  bool flag(const std::string& dotted) const {
    const std::string& v = get(dotted);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: " + dotted + " must be true or false, got '" + v + "'");
  }

  std::vector<double> numbers(const std::string& dotted) const {
    std::vector<double> out;
    for (const auto& item : detail::split_list(get(dotted), ',')) {
      try {
        out.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("config: " + dotted + " has a non-numeric entry '" + item + "'");
      }
    }
    return out;
  }

  std::uint64_t seed() const { return count("run.seed"); }

  /// Canonical "section.key=value" lines in key order.
  std::string canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  /// FNV-1a 64 of the canonical dump, hex encoded.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  GeneratorSpec generator_spec() const {
    const std::uint64_t data_seed = mix_seed(seed(), seed_stream::data);
    if (get("data.preset") == "standard") {
      const GeneratorSpec g = standard_generator_spec(data_seed, count("data.samples"));
      try {
        g.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
      return g;
    }
    if (get("data.preset") != "custom") throw ConfigError("config: data.preset must be standard or custom");
    GeneratorSpec g;
    g.seed = data_seed;
    g.num_samples = count("data.samples");
    g.objectives = detail::split_list(get("data.objectives"), ',');
    g.latent_dim = count("data.latent_dim");
    const auto rows = detail::split_list(get("data.loading"), ';');
    if (rows.size() != g.objectives.size()) throw ConfigError("config: data.loading needs one row per objective");
    g.loading = Matrix(rows.size(), g.latent_dim);
    for (std::size_t m = 0; m < rows.size(); ++m) {
      const auto entries = detail::split_list(rows[m], ',');
      if (entries.size() != g.latent_dim) throw ConfigError("config: data.loading row width must equal latent_dim");
      for (std::size_t c = 0; c < entries.size(); ++c) g.loading(m, c) = std::stod(entries[c]);
    }
    g.score_noise_sd = number("data.score_noise_sd");
    g.label_noise_sd = number("data.label_noise_sd");
    const std::vector<double> bias = numbers("data.bias");
    if (!bias.empty()) {
      g.objective_bias = bias;
    } else {
      const std::vector<double> rates = numbers("data.positive_rates");
      if (rates.size() != g.objectives.size()) throw ConfigError("config: data.positive_rates needs one rate per objective");
      for (std::size_t m = 0; m < rates.size(); ++m) {
        double norm = g.label_noise_sd * g.label_noise_sd;
        for (std::size_t c = 0; c < g.latent_dim; ++c) norm += g.loading(m, c) * g.loading(m, c);
        g.objective_bias.push_back(bias_for_rate(rates[m], std::sqrt(norm)));
      }
    }
    for (const auto& item : detail::split_list(get("data.features"), ',')) {
      const auto parts = detail::split_list(item, ':');
      if (parts.size() != 4) throw ConfigError("config: feature '" + item + "' must be name:cardinality:dependence:direction");
      FeatureSpec f;
      f.name = parts[0];
      f.cardinality = static_cast<std::size_t>(std::stoul(parts[1]));
      f.dependence = std::stod(parts[2]);
      for (const auto& d : detail::split_list(parts[3], ' ')) f.direction.push_back(std::stod(d));
      g.features.push_back(f);
    }
    try {
      g.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return g;
  }

  ModelConfig model_config(const Schema& schema) const {
    ModelConfig c;
    c.num_objectives = schema.objectives.size();
    c.personalized_features = schema.features;
    c.buckets = count("model.buckets");
    c.embed_dim = count("model.embed_dim");
    c.key_dim = count("model.key_dim");
    c.feature_dim = count("model.feature_dim");
    if (!get("model.embedding_init_sd").empty()) c.embedding_init_sd = number("model.embedding_init_sd");
    c.ablation.self_attention = flag("model.self_attention");
    c.ablation.cross_attention = flag("model.cross_attention");
    c.ablation.personalized = flag("model.personalized");
    c.ablation.gate = flag("model.gate");
    c.ablation.linear_path = flag("model.linear_path");
    c.ablation.relation_aware_path = flag("model.relation_aware_path");
    c.ablation.gated_path = flag("model.gated_path");
    const std::string& lp = get("model.linear_path_input");
    if (lp == "raw_scores") {
      c.linear_path_input = LinearPathInput::raw_scores;
    } else if (lp == "embeddings") {
      c.linear_path_input = LinearPathInput::embeddings;
    } else {
      throw ConfigError("config: model.linear_path_input must be raw_scores or embeddings");
    }
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  TrainConfig train_config(std::size_t num_objectives) const {
    TrainConfig t;
    try {
      t.loss = parse_loss(get("train.loss"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    t.lr = number("train.lr");
    t.batch_size = count("train.batch_size");
    t.epochs = count("train.epochs");
    const std::string& mode = get("train.mode");
    if (mode == "offline") {
      t.mode = TrainMode::offline;
    } else if (mode == "streaming") {
      t.mode = TrainMode::streaming;
    } else {
      throw ConfigError("config: train.mode must be offline or streaming");
    }
    t.streaming_inner_epochs = count("train.streaming_inner_epochs");
    t.weights = {numbers("train.weights")};
    t.softrank.regularization_strength = number("train.epsilon");
    t.momentum = number("train.momentum");
    t.aucm_margin = number("train.aucm_margin");
    if (const std::string& pn = get("train.pairwise_normalization"); pn == "mean") {
      t.pair_normalization = PairNormalization::mean;
    } else if (pn == "sum") {
      t.pair_normalization = PairNormalization::sum;
    } else {
      throw ConfigError("config: train.pairwise_normalization must be mean or sum");
    }
    t.eval_every = count("train.eval_every");
    t.seed = seed();
    try {
      t.validate();
      t.weights.validate(num_objectives);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return t;
  }

  std::vector<std::vector<double>> sweep_grid() const {
    std::vector<std::vector<double>> grid;
    for (const auto& row : detail::split_list(get("sweep.weights"), ';')) {
      std::vector<double> w;
      for (const auto& e : detail::split_list(row, ',')) w.push_back(std::stod(e));
      grid.push_back(w);
    }
    return grid;
  }

  std::vector<LossKind> loss_list(const std::string& dotted) const {
    std::vector<LossKind> out;
    for (const auto& name : detail::split_list(get(dotted), ',')) {
      try {
        out.push_back(parse_loss(name));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace harmonrank
