// Experiment configs, multi-seed sweeps, summary tables and consistency
// comparisons. This is the layer the command-line tool drives.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "unismmc/json_schema.hpp"
#include "unismmc/trainer.hpp"

namespace unismmc {

/// A named method variant: base method plus ablation switches.
struct MethodVariant {
  std::string name;
  Method method = Method::unis_mmc;
  bool use_semi = true;
  bool use_neg = true;
};

/// Recognized names: agg_mm, mt_mml, unsup_mmc, sup_mmc, unis_mmc and the
/// unis_mmc ablations unis_mmc_no_semi, unis_mmc_no_neg, unis_mmc_no_semi_no_neg.
inline MethodVariant parse_method_variant(const std::string& name) {
  if (name == "unis_mmc_no_semi") return {name, Method::unis_mmc, false, true};
  if (name == "unis_mmc_no_neg") return {name, Method::unis_mmc, true, false};
  if (name == "unis_mmc_no_semi_no_neg") return {name, Method::unis_mmc, false, false};
  return {name, parse_method(name), true, true};
}

struct ExperimentConfig {
  std::optional<std::filesystem::path> dataset;  // resolved against the config file's directory
  std::optional<SynthSpec> synth;
  TrainConfig train;
  std::vector<MethodVariant> methods;
  std::vector<std::uint64_t> seeds;
  bool export_embeddings = true;
  std::string source_text;  // the config file exactly as read

  void validate() const {
    if (dataset.has_value() == synth.has_value())
      throw ConfigError("config: exactly one of \"dataset\" and \"synth\" is required");
    if (methods.empty()) throw ConfigError("config: \"methods\" must be non-empty");
    if (seeds.empty()) throw ConfigError("config: \"seeds\" must be non-empty");
    train.validate();
  }
};

inline TrainConfig train_config_from_json(const schema::json& j, const std::string& where) {
  schema::Object o(j, where);
  o.only({"temperature", "lambda", "learning_rate", "weight_decay", "micro_batch_size", "effective_batch_size",
          "max_epochs", "plateau_patience", "plateau_factor", "baseline_include_uni"});
  TrainConfig c;
  c.temperature = o.get_or("temperature", c.temperature);
  c.lambda = o.get_or("lambda", c.lambda);
  c.learning_rate = o.get_or("learning_rate", c.learning_rate);
  c.weight_decay = o.get_or("weight_decay", c.weight_decay);
  c.micro_batch_size = o.get_or<std::size_t>("micro_batch_size", c.micro_batch_size);
  c.effective_batch_size = o.get_or<std::size_t>("effective_batch_size", c.effective_batch_size);
  c.max_epochs = o.get_or<std::size_t>("max_epochs", c.max_epochs);
  c.plateau_patience = o.get_or<std::size_t>("plateau_patience", c.plateau_patience);
  c.plateau_factor = o.get_or("plateau_factor", c.plateau_factor);
  c.baseline_include_uni = o.get_or("baseline_include_uni", c.baseline_include_uni);
  return c;
}

inline ModelDims model_dims_from_json(const schema::json& j, const std::string& where) {
  schema::Object o(j, where);
  o.only({"encoder_hidden", "representation_dim", "classifier_hidden"});
  ModelDims d;
  d.encoder_hidden = o.get_or("encoder_hidden", d.encoder_hidden);
  d.representation_dim = o.get_or<std::size_t>("representation_dim", d.representation_dim);
  if (o.has("classifier_hidden")) {
    auto h = o.get<std::vector<std::size_t>>("classifier_hidden");
    if (h.size() != 2) throw ConfigError(o.path("classifier_hidden") + ": exactly two hidden widths required");
    d.classifier_hidden = {h[0], h[1]};
  }
  for (auto w : d.encoder_hidden)
    if (w == 0) throw ConfigError(o.path("encoder_hidden") + ": widths must be >= 1");
  if (d.representation_dim == 0) throw ConfigError(o.path("representation_dim") + ": must be >= 1");
  return d;
}

/// Parses and validates a config document. Relative dataset paths resolve
/// against `base_dir`.
inline ExperimentConfig experiment_config_from_text(const std::string& text, const std::filesystem::path& base_dir,
                                                    const std::string& source = "config") {
  const auto j = schema::parse(text, source);
  schema::Object o(j, source);
  o.only({"dataset", "synth", "methods", "seeds", "train", "model", "export_embeddings"});
  ExperimentConfig c;
  c.source_text = text;
  if (o.has("dataset")) {
    std::filesystem::path p = o.get<std::string>("dataset");
    c.dataset = p.is_absolute() ? p : base_dir / p;
  }
  if (o.has("synth")) c.synth = synth_spec_from_json(o.raw("synth"), o.path("synth"));
  if (o.has("train")) c.train = train_config_from_json(o.raw("train"), o.path("train"));
  if (o.has("model")) c.train.model = model_dims_from_json(o.raw("model"), o.path("model"));
  for (const auto& m : o.get<std::vector<std::string>>("methods")) {
    try {
      c.methods.push_back(parse_method_variant(m));
    } catch (const ConfigError& e) {
      throw ConfigError(o.path("methods") + ": " + e.what());
    }
  }
  c.seeds = o.get<std::vector<std::uint64_t>>("seeds");
  c.export_embeddings = o.get_or("export_embeddings", c.export_embeddings);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  return experiment_config_from_text(io::read_file(path), path.parent_path(), path.string());
}

inline schema::json to_json(const TrainConfig& c) {
  return {{"temperature", c.temperature},
          {"lambda", c.lambda},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"micro_batch_size", c.micro_batch_size},
          {"effective_batch_size", c.effective_batch_size},
          {"max_epochs", c.max_epochs},
          {"plateau_patience", c.plateau_patience},
          {"plateau_factor", c.plateau_factor},
          {"baseline_include_uni", c.baseline_include_uni}};
}

inline schema::json to_json(const ModelDims& d) {
  return {{"encoder_hidden", d.encoder_hidden},
          {"representation_dim", d.representation_dim},
          {"classifier_hidden", {d.classifier_hidden[0], d.classifier_hidden[1]}}};
}

/// Fully resolved settings of one run, written next to its metrics.
inline schema::json resolved_run_config(const ExperimentConfig& ec, const MethodVariant& mv, std::uint64_t seed,
                                        const SynthSpec& data_spec) {
  schema::json j;
  j["method"] = mv.name;
  j["base_method"] = to_string(mv.method);
  j["use_semi"] = mv.use_semi;
  j["use_neg"] = mv.use_neg;
  j["seed"] = seed;
  j["train"] = to_json(ec.train);
  j["model"] = to_json(ec.train.model);
  j["data"] = to_json(data_spec);
  if (ec.dataset) j["dataset"] = ec.dataset->string();
  return j;
}

inline TrainConfig run_train_config(const ExperimentConfig& ec, const MethodVariant& mv, std::uint64_t seed) {
  TrainConfig c = ec.train;
  c.method = mv.method;
  c.use_semi = mv.use_semi;
  c.use_neg = mv.use_neg;
  c.seed = seed;
  return c;
}

inline std::string run_dir_name(const MethodVariant& mv, std::uint64_t seed) {
  return mv.name + "_seed" + std::to_string(seed);
}

struct RunOutcome {
  std::string method;
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  RunMetrics metrics;
  std::string error;  // empty on success
};

/// Trains one (method, seed) run and writes config.json, metrics.csv,
/// checkpoint.ummc and (optionally) embeddings_test.csv into `dir`.
inline RunOutcome run_one(const ExperimentConfig& ec, const Dataset& data, const MethodVariant& mv, std::uint64_t seed,
                          const std::filesystem::path& dir) {
  RunOutcome out{mv.name, seed, dir, {}, {}};
  std::filesystem::create_directories(dir);
  io::write_file_atomic(dir / "config.json", resolved_run_config(ec, mv, seed, data.spec).dump(2) + "\n");
  const TrainConfig cfg = run_train_config(ec, mv, seed);
  ModelState model = init_model(cfg.model.spec_for(data.spec), seed);
  try {
    TrainResult r = train(cfg, data, model);
    write_metrics_csv(r.metrics, dir / "metrics.csv");
    save_checkpoint(r.best_model, dir / "checkpoint.ummc");
    if (ec.export_embeddings) export_embeddings(r.best_model, data.test, dir / "embeddings_test.csv");
    out.metrics = std::move(r.metrics);
  } catch (const TrainingDiverged& e) {
    write_metrics_csv(e.metrics, dir / "metrics.csv");
    out.metrics = e.metrics;
    out.error = std::string("run ") + dir.filename().string() + ": " + e.what();
  } catch (const Error& e) {
    out.error = std::string("run ") + dir.filename().string() + ": " + e.what();
  }
  return out;
}

struct MethodSummary {
  std::string method;
  std::size_t runs = 0;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // sample standard deviation (n - 1), 0 for one run
  double mean_both_correct = 0.0;
  double mean_both_wrong = 0.0;
  double mean_exclusive = 0.0;
};

/// Aggregates successful runs per method in first-appearance order.
inline std::vector<MethodSummary> summarize(const std::vector<RunOutcome>& runs) {
  std::vector<MethodSummary> out;
  for (const auto& r : runs) {
    if (!r.error.empty() || !r.metrics.test) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.method == r.method; });
    if (it == out.end()) {
      out.push_back({r.method});
      it = out.end() - 1;
    }
    ++it->runs;
  }
  for (auto& s : out) {
    std::vector<double> acc;
    for (const auto& r : runs) {
      if (r.method != s.method || !r.error.empty() || !r.metrics.test) continue;
      acc.push_back(r.metrics.test->acc_multi);
      s.mean_both_correct += r.metrics.test->consistency.both_correct;
      s.mean_both_wrong += r.metrics.test->consistency.both_wrong;
      s.mean_exclusive += r.metrics.test->consistency.exclusive;
    }
    const double n = static_cast<double>(acc.size());
    for (double a : acc) s.mean_acc += a;
    s.mean_acc /= n;
    s.mean_both_correct /= n;
    s.mean_both_wrong /= n;
    s.mean_exclusive /= n;
    if (acc.size() > 1) {
      double ss = 0.0;
      for (double a : acc) ss += (a - s.mean_acc) * (a - s.mean_acc);
      s.std_acc = std::sqrt(ss / (n - 1.0));
    }
  }
  return out;
}

inline std::string format_summary_csv(const std::vector<MethodSummary>& rows) {
  std::ostringstream os;
  os << "method,runs,mean_test_acc,std_test_acc,mean_both_correct,mean_both_wrong,mean_exclusive\n";
  for (const auto& s : rows)
    os << s.method << ',' << s.runs << ',' << detail::fmt_double(s.mean_acc) << ',' << detail::fmt_double(s.std_acc)
       << ',' << detail::fmt_double(s.mean_both_correct) << ',' << detail::fmt_double(s.mean_both_wrong) << ','
       << detail::fmt_double(s.mean_exclusive) << '\n';
  return os.str();
}

/// Human-readable "method  acc mean±std" table, accuracies in percent.
inline std::string format_summary_table(const std::vector<MethodSummary>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "Method" << std::right << std::setw(6) << "Runs" << std::setw(18)
     << "Test Acc (%)" << '\n';
  for (const auto& s : rows) {
    std::ostringstream acc;
    acc << std::fixed << std::setprecision(2) << 100.0 * s.mean_acc << " +- " << 100.0 * s.std_acc;
    os << std::left << std::setw(26) << s.method << std::right << std::setw(6) << s.runs << std::setw(18) << acc.str()
       << '\n';
  }
  return os.str();
}

inline Dataset load_experiment_data(const ExperimentConfig& ec) {
  return ec.dataset ? load_dataset(*ec.dataset) : generate(*ec.synth);
}

struct SweepResult {
  std::vector<RunOutcome> runs;  // (method, seed) order of the config
  std::vector<MethodSummary> summary;
  bool ok() const {
    return std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.error.empty(); });
  }
};

/// Runs every (method, seed) pair, `parallel` at a time on separate threads.
/// Each run owns its directory and its model; only the dataset is shared,
/// read-only. Writes config.input.json (the config as given), summary.csv
/// and summary.txt into `out_dir`.
inline SweepResult run_sweep(const ExperimentConfig& ec, const Dataset& data, const std::filesystem::path& out_dir,
                             std::size_t parallel = 1) {
  ec.validate();
  std::filesystem::create_directories(out_dir);
  io::write_file_atomic(out_dir / "config.input.json", ec.source_text);

  struct Job {
    const MethodVariant* mv;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& mv : ec.methods)
    for (auto s : ec.seeds) jobs.push_back({&mv, s});

  SweepResult res;
  res.runs.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      const auto& j = jobs[i];
      res.runs[i] = run_one(ec, data, *j.mv, j.seed, out_dir / run_dir_name(*j.mv, j.seed));
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(parallel, 1, jobs.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  res.summary = summarize(res.runs);
  io::write_file_atomic(out_dir / "summary.csv", format_summary_csv(res.summary));
  io::write_file_atomic(out_dir / "summary.txt", format_summary_table(res.summary));
  return res;
}

// ---------------------------------------------------------------------------
// Consistency comparison across completed runs
// ---------------------------------------------------------------------------

struct ConsistencyRow {
  std::string run;
  std::string method;
  std::string split;
  Consistency values;
};

/// Reads the last record of each run's metrics.csv (the test-split `final`
/// record for completed runs). Rows follow the order of `run_dirs`.
inline std::vector<ConsistencyRow> consistency_table(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.size() < 2) throw ConfigError("consistency comparison needs at least 2 run directories");
  std::vector<ConsistencyRow> rows;
  for (const auto& dir : run_dirs) {
    const auto metrics_path = dir / "metrics.csv";
    if (!std::filesystem::exists(metrics_path)) throw Error("missing metrics file " + metrics_path.string());
    const MetricsTable t = read_metrics_csv(metrics_path);
    if (t.rows.empty()) throw FormatError(metrics_path.string() + ": no records");
    const std::size_t r = t.rows.size() - 1;
    ConsistencyRow row;
    row.run = dir.filename().string();
    if (row.run.empty()) row.run = dir.parent_path().filename().string();
    row.method = row.run;
    if (const auto cfg_path = dir / "config.json"; std::filesystem::exists(cfg_path)) {
      const auto j = schema::parse(io::read_file(cfg_path), cfg_path.string());
      if (j.contains("method") && j["method"].is_string()) row.method = j["method"].get<std::string>();
    }
    row.split = t.rows[r][t.column("split")];
    row.values = {t.number(r, "both_correct"), t.number(r, "both_wrong"), t.number(r, "exclusive")};
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_consistency_table(const std::vector<ConsistencyRow>& rows) {
  std::ostringstream os;
  os << "run,method,split,both_correct,both_wrong,exclusive\n";
  for (const auto& r : rows)
    os << r.run << ',' << r.method << ',' << r.split << ',' << detail::fmt_double(r.values.both_correct) << ','
       << detail::fmt_double(r.values.both_wrong) << ',' << detail::fmt_double(r.values.exclusive) << '\n';
  return os.str();
}

}  // namespace unismmc
