// Command-line driver: data generation, training, evaluation and the analysis suite.
//
// Exit codes: 0 success, 1 runtime failure, 2 invalid input or configuration.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "harmonrank/checkpoint.hpp"
#include "harmonrank/config.hpp"
#include "harmonrank/data.hpp"
#include "harmonrank/experiments.hpp"
#include "harmonrank/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace harmonrank;

namespace {

class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

RunConfig load_config(const CommonOptions& o) {
  RunConfig rc = o.config.empty() ? RunConfig{} : RunConfig::from_file(o.config);
  for (const auto& s : o.overrides) rc.apply_override(s);
  if (o.seed) rc.set("run", "seed", std::to_string(*o.seed));
  return rc;
}

json metadata() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return {{"timestamp", buf}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json nullable(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json report_json(const AUCReport& r, const std::vector<std::string>& names) {
  json per = json::object();
  for (std::size_t m = 0; m < names.size(); ++m) {
    per[names[m]] = r.per_objective[m] ? json(*r.per_objective[m]) : json(nullptr);
  }
  return {{"per_objective", per}, {"sum", r.sum}, {"degenerate", r.degenerate}};
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(nullable(m(i, j)));
    rows.push_back(row);
  }
  return rows;
}

Dataset load_data(const std::string& path, const Schema* expected = nullptr) {
  if (!fs::exists(path)) throw InputError("data file not found: " + path);
  return load_csv(path, expected);
}

/// Data from --data when given, otherwise generated from the [data] section.
Dataset dataset_for(const RunConfig& rc, const std::string& data_path) {
  return data_path.empty() ? generate(rc.generator_spec()) : load_data(data_path);
}

Split split_for(const RunConfig& rc, const Dataset& ds) {
  return split(ds, rc.number("data.test_fraction"), mix_seed(rc.seed(), seed_stream::split));
}

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty()) throw InputError("--checkpoint is required");
  if (!fs::exists(path)) throw InputError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

Dataset data_for_checkpoint(const Checkpoint& ck, const std::string& data_path) {
  if (data_path.empty()) throw InputError("--data is required");
  Schema expected{ck.objectives, ck.config.personalized_features};
  try {
    return load_data(data_path, &expected);
  } catch (const std::invalid_argument& e) {
    throw InputError(std::string("data does not match checkpoint schema: ") + e.what());
  }
}

std::string format_double(double v) { return std::isnan(v) ? std::string("nan") : detail::format_double(v); }

int cmd_gen_data(const CommonOptions& o) {
  const RunConfig rc = load_config(o);
  if (o.out.empty()) throw InputError("--out is required");
  const Dataset ds = generate(rc.generator_spec());
  if (const fs::path parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_csv(ds, o.out);
  json rates = json::object();
  for (std::size_t m = 0; m < ds.num_objectives(); ++m) rates[ds.schema().objectives[m]] = ds.positive_rate(m);
  json sidecar = {{"samples", ds.size()},
                  {"objectives", ds.schema().objectives},
                  {"positive_rates", rates},
                  {"rho", matrix_json(label_spearman(ds))},
                  {"seed", rc.seed()},
                  {"config_hash", rc.hash()},
                  {"metadata", metadata()}};
  write_json(fs::path(o.out).replace_extension(".meta.json"), sidecar);
  return 0;
}

int cmd_train(const CommonOptions& o, const std::string& data_path) {
  const RunConfig rc = load_config(o);
  if (o.out.empty()) throw InputError("--out is required");
  const Dataset ds = dataset_for(rc, data_path);
  const Split sp = split_for(rc, ds);
  const ModelConfig mc = rc.model_config(ds.schema());
  const TrainConfig tc = rc.train_config(mc.num_objectives);
  const TrainResult result = train(sp.train, &sp.test, mc, tc);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  save_checkpoint({mc, ds.schema().objectives, result.params}, (dir / "checkpoint.txt").string());

  std::string history;
  for (const auto& rec : result.history) {
    json line = {{"epoch", rec.epoch}, {"train_loss", rec.train_loss}};
    if (rec.test) line["test"] = report_json(*rec.test, ds.schema().objectives);
    history += line.dump() + "\n";
  }
  write_text(dir / "history.jsonl", history);

  const AUCReport final_report = evaluate(Model(mc), result.params, sp.test);
  json metrics = report_json(final_report, ds.schema().objectives);
  metrics["loss"] = result.history.empty() ? json(nullptr) : json(result.history.back().train_loss);
  metrics["seed"] = rc.seed();
  metrics["config_hash"] = rc.hash();
  metrics["updates"] = result.updates;
  metrics["metadata"] = metadata();
  write_json(dir / "metrics.json", metrics);
  std::cout << "test auc sum " << final_report.sum << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& data_path) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Dataset ds = data_for_checkpoint(ck, data_path);
  const AUCReport r = evaluate(Model(ck.config), ck.params, ds);
  json metrics = report_json(r, ck.objectives);
  metrics["samples"] = ds.size();
  metrics["metadata"] = metadata();
  write_json(o.out.empty() ? fs::path("metrics.json") : fs::path(o.out), metrics);
  std::cout << "auc sum " << r.sum << "\n";
  return 0;
}

int cmd_analyze(const CommonOptions& o, const std::string& checkpoint, const std::string& data_path) {
  const RunConfig rc = load_config(o);
  const Checkpoint ck = read_checkpoint(checkpoint);
  const Dataset ds = data_for_checkpoint(ck, data_path);
  AnalysisOptions opt;
  opt.shuffles = rc.count("analysis.shuffles");
  opt.seed = mix_seed(rc.seed(), seed_stream::analysis);
  if (const std::string& anchor = rc.get("analysis.anchor"); !anchor.empty()) {
    const auto it = std::find(ck.objectives.begin(), ck.objectives.end(), anchor);
    if (it == ck.objectives.end()) throw InputError("analysis.anchor names an unknown objective: " + anchor);
    opt.anchor = static_cast<std::size_t>(it - ck.objectives.begin());
  }
  const AnalysisResult a = attention_analysis(Model(ck.config), ck.params, ds, opt);
  json out = {{"objectives", ck.objectives},
              {"rho", matrix_json(a.rho)},
              {"attention", matrix_json(a.attention)},
              {"pearson_r", nullable(a.pearson_r)},
              {"p_value", a.p_value},
              {"pairs", a.pairs},
              {"metadata", metadata()}};
  write_json(o.out.empty() ? fs::path("analysis.json") : fs::path(o.out), out);
  std::cout << "pearson r " << a.pearson_r << " p " << a.p_value << "\n";
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& data_path) {
  const RunConfig rc = load_config(o);
  const Dataset ds = dataset_for(rc, data_path);
  const Split sp = split_for(rc, ds);
  const ModelConfig mc = rc.model_config(ds.schema());
  const TrainConfig tc = rc.train_config(mc.num_objectives);
  auto grid = rc.sweep_grid();
  if (grid.empty()) grid.push_back(std::vector<double>(mc.num_objectives, 1.0));
  for (const auto& w : grid) {
    if (w.size() != mc.num_objectives) throw ConfigError("config: sweep weight vectors need one entry per objective");
  }
  const auto points = pareto_sweep(sp.train, sp.test, mc, tc, grid);
  const auto& names = ds.schema().objectives;
  std::string csv;
  for (const auto& n : names) csv += "w_" + n + ",";
  for (const auto& n : names) csv += "auc_" + n + ",";
  csv += "on_front\n";
  for (const auto& p : points) {
    for (double w : p.weights) csv += format_double(w) + ",";
    for (double a : p.auc) csv += format_double(a) + ",";
    csv += p.on_front ? "1\n" : "0\n";
  }
  write_text(o.out.empty() ? fs::path("pareto.csv") : fs::path(o.out), csv);
  return 0;
}

int cmd_skew(const CommonOptions& o, const std::string& data_path) {
  const RunConfig rc = load_config(o);
  const Dataset ds = dataset_for(rc, data_path);
  const Split sp = split_for(rc, ds);
  const ModelConfig mc = rc.model_config(ds.schema());
  const TrainConfig tc = rc.train_config(mc.num_objectives);
  std::optional<std::size_t> objective;
  if (const std::string& name = rc.get("skew.objective"); !name.empty()) {
    const auto& names = ds.schema().objectives;
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw ConfigError("config: skew.objective names an unknown objective: " + name);
    objective = static_cast<std::size_t>(it - names.begin());
  }
  const auto rows = skew_experiment(sp.train, sp.test, mc, tc, rc.numbers("skew.factors"), rc.loss_list("skew.losses"),
                                    objective);
  std::string csv = "loss,ratio,auc_sum,rel_drop_pct\n";
  for (const auto& r : rows) {
    csv += r.loss + "," + format_double(r.factor) + "," + format_double(r.auc_sum) + "," +
           format_double(r.rel_drop_pct) + "\n";
  }
  write_text(o.out.empty() ? fs::path("skew.csv") : fs::path(o.out), csv);
  return 0;
}

int cmd_bench(const CommonOptions& o) {
  const RunConfig rc = load_config(o);
  BenchOptions opt;
  opt.repeats = rc.count("bench.repeats");
  opt.num_objectives = rc.count("bench.objectives");
  opt.positive_rate = rc.number("bench.positive_rate");
  opt.softrank.regularization_strength = rc.number("bench.epsilon");
  opt.seed = rc.seed();
  std::vector<std::size_t> ns;
  for (double n : rc.numbers("bench.n_values")) {
    if (!(n >= 2) || n != std::floor(n)) throw ConfigError("config: bench.n_values must be integers >= 2");
    ns.push_back(static_cast<std::size_t>(n));
  }
  const auto rows = bench_losses(ns, rc.loss_list("bench.losses"), opt);
  std::string csv = "loss,n,samples_per_sec,growth_ratio\n";
  for (const auto& r : rows) {
    csv += r.loss + "," + std::to_string(r.n) + "," + format_double(r.samples_per_sec) + "," +
           format_double(r.growth_ratio) + "\n";
  }
  write_text(o.out.empty() ? fs::path("bench.csv") : fs::path(o.out), csv);
  std::cout << csv;
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "run configuration file");
  cmd->add_option("--seed", o.seed, "global seed (overrides run.seed)");
  cmd->add_option("--out", o.out, "output path");
  cmd->add_option("--set", o.overrides, "override, e.g. train.lr=0.5 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ranking-aligned multi-objective score ensembling"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string data_path, checkpoint;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV and its sidecar");
  auto* trn = app.add_subcommand("train", "train a model; writes checkpoint.txt, metrics.json, history.jsonl");
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  auto* swp = app.add_subcommand("sweep", "loss-weight sweep with Pareto marking");
  auto* ana = app.add_subcommand("analyze", "label correlation vs learned attention");
  auto* skw = app.add_subcommand("skew", "label-skew robustness table");
  auto* bch = app.add_subcommand("bench", "loss throughput and growth ratios");
  for (auto* cmd : {gen, trn, evl, swp, ana, skw, bch}) add_common(cmd, opts);
  for (auto* cmd : {trn, evl, swp, ana, skw}) cmd->add_option("--data", data_path, "dataset CSV");
  for (auto* cmd : {evl, ana}) cmd->add_option("--checkpoint", checkpoint, "checkpoint file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(opts);
    if (trn->parsed()) return cmd_train(opts, data_path);
    if (evl->parsed()) return cmd_eval(opts, checkpoint, data_path);
    if (swp->parsed()) return cmd_sweep(opts, data_path);
    if (ana->parsed()) return cmd_analyze(opts, checkpoint, data_path);
    if (skw->parsed()) return cmd_skew(opts, data_path);
    if (bch->parsed()) return cmd_bench(opts);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
