// Training loop, evaluation and run persistence.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "unismmc/losses.hpp"
#include "unismmc/model.hpp"
#include "unismmc/optim.hpp"
#include "unismmc/synthgen.hpp"

namespace unismmc {

enum class Method { unis_mmc, mt_mml, agg_mm, unsup_mmc, sup_mmc };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::unis_mmc: return "unis_mmc";
    case Method::mt_mml: return "mt_mml";
    case Method::agg_mm: return "agg_mm";
    case Method::unsup_mmc: return "unsup_mmc";
    case Method::sup_mmc: return "sup_mmc";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (auto m : {Method::unis_mmc, Method::mt_mml, Method::agg_mm, Method::unsup_mmc, Method::sup_mmc})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown method '" + s + "' (expected unis_mmc, mt_mml, agg_mm, unsup_mmc or sup_mmc)");
}

struct ModelDims {
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::size_t representation_dim = 32;
  std::array<std::size_t, 2> classifier_hidden{64, 64};

  ModelSpec spec_for(const SynthSpec& data) const {
    ModelSpec s;
    for (auto d : data.feature_dims) s.encoders.push_back({d, encoder_hidden, representation_dim});
    s.classifier_hidden = classifier_hidden;
    s.num_classes = data.num_classes;
    return s;
  }
};

struct TrainConfig {
  Method method = Method::unis_mmc;
  bool use_semi = true;  // unis_mmc ablation switches
  bool use_neg = true;
  double temperature = 0.07;
  double lambda = 0.1;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t micro_batch_size = 32;
  std::size_t effective_batch_size = 128;
  std::size_t max_epochs = 30;
  std::size_t plateau_patience = 3;
  double plateau_factor = 0.5;
  /// Adds the unimodal loss to the unsup_mmc / sup_mmc baselines.
  bool baseline_include_uni = false;
  std::uint64_t seed = 0;
  ModelDims model;

  void validate() const {
    if (micro_batch_size == 0) throw ConfigError("micro_batch_size must be >= 1");
    if (effective_batch_size == 0 || effective_batch_size % micro_batch_size != 0)
      throw ConfigError("effective_batch_size must be a positive multiple of micro_batch_size");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (plateau_patience == 0) throw ConfigError("plateau_patience must be >= 1");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct ObjectiveTerms {
  Var total;
  LossBundle values;
  std::vector<Var> reps;
  std::vector<Var> unimodal_logits;  // empty for agg_mm
  Var fused_logits;
};

/// Builds the method's objective for one micro-batch on `g`.
inline ObjectiveTerms build_objective(Graph& g, ModelState& model, const MultimodalBatch& batch, const TrainConfig& cfg) {
  ObjectiveTerms t;
  t.reps = encode(g, model, batch);
  t.fused_logits = fuse_and_predict(g, model, t.reps).logits;
  Var l_multi = multimodal_loss(batch.labels, t.fused_logits);
  t.values.l_multi = l_multi.value().item();

  auto unimodal = [&] {
    for (std::size_t m = 0; m < t.reps.size(); ++m) t.unimodal_logits.push_back(predict_unimodal(g, model, m, t.reps[m]));
    Var l = unimodal_loss(batch.labels, t.unimodal_logits);
    t.values.l_uni = l.value().item();
    return l;
  };

  switch (cfg.method) {
    case Method::agg_mm:
      t.total = l_multi;
      break;
    case Method::mt_mml:
      t.total = add(unimodal(), l_multi);
      break;
    case Method::unis_mmc: {
      Var l_uni = unimodal();
      std::vector<std::vector<int>> preds;
      for (const auto& z : t.unimodal_logits) preds.push_back(argmax_rows(z.value()));
      std::vector<PairSets> sets;
      for (auto [a, b] : modality_pairs(t.reps.size())) sets.push_back(categorize_pairs(batch.labels, preds[a], preds[b]));
      MmcOptions opt{cfg.temperature, cfg.use_semi, cfg.use_neg};
      Var l_mmc = total_mmc_loss(t.reps, sets, opt, &t.values.pairs);
      t.values.l_mmc = l_mmc.value().item();
      t.total = total_objective(l_uni, l_multi, l_mmc, cfg.lambda);
      break;
    }
    case Method::unsup_mmc:
    case Method::sup_mmc: {
      const auto mode = cfg.method == Method::sup_mmc ? ContrastiveMode::supervised : ContrastiveMode::unsupervised;
      Var l_con;
      const auto pairs = modality_pairs(t.reps.size());
      if (pairs.empty()) throw ConfigError("contrastive baselines need at least 2 modalities");
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        Var term = baseline_contrastive(t.reps[pairs[p].first], t.reps[pairs[p].second], batch.labels, mode, cfg.temperature);
        l_con = p == 0 ? term : add(l_con, term);
      }
      t.values.l_mmc = l_con.value().item();
      Var base = cfg.baseline_include_uni ? add(unimodal(), l_multi) : l_multi;
      t.total = add(base, scale(l_con, cfg.lambda));
      break;
    }
  }
  t.values.total = t.total.value().item();
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Share of samples (averaged over modality pairs) whose unimodal predictions
/// are both correct, both wrong, or mutually exclusive.
struct Consistency {
  double both_correct = 0.0;
  double both_wrong = 0.0;
  double exclusive = 0.0;
};

inline Consistency consistency(std::span<const int> labels, const std::vector<std::vector<int>>& unimodal_preds) {
  Consistency c;
  const auto pairs = modality_pairs(unimodal_preds.size());
  if (pairs.empty() || labels.empty()) return c;
  for (auto [a, b] : pairs) {
    const PairSets s = categorize_pairs(labels, unimodal_preds[a], unimodal_preds[b]);
    const double n = static_cast<double>(labels.size());
    c.both_correct += static_cast<double>(s.positive.size()) / n;
    c.exclusive += static_cast<double>(s.semi_positive.size()) / n;
    c.both_wrong += static_cast<double>(s.negative.size()) / n;
  }
  const double np = static_cast<double>(pairs.size());
  c.both_correct /= np;
  c.exclusive /= np;
  c.both_wrong /= np;
  return c;
}

struct EvalSummary {
  double acc_multi = 0.0;
  std::vector<double> acc_uni;
  Consistency consistency;
  double cos_positive = std::numeric_limits<double>::quiet_NaN();
  double cos_semi = std::numeric_limits<double>::quiet_NaN();
  double cos_negative = std::numeric_limits<double>::quiet_NaN();
  double loss_multi = 0.0;
};

struct Evaluation {
  std::vector<int> preds_multi;
  std::vector<std::vector<int>> preds_uni;
  std::vector<Tensor> reps;  // per modality, n x d_r
  Tensor fused;              // n x (M * d_r)
  EvalSummary summary;
};

namespace detail {

inline double row_cosine(const Tensor& a, const Tensor& b, std::size_t r) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    dot += a(r, c) * b(r, c);
    na += a(r, c) * a(r, c);
    nb += b(r, c) * b(r, c);
  }
  const double den = std::sqrt(na) * std::sqrt(nb);
  return den > 0.0 ? dot / den : 0.0;
}

inline void append_rows(Tensor& dst, const Tensor& src) {
  if (dst.size() == 0) {
    dst = src;
    return;
  }
  std::vector<double> data = std::move(dst.data());
  data.insert(data.end(), src.data().begin(), src.data().end());
  dst = Tensor(dst.rows() + src.rows(), src.cols(), std::move(data));
}

}  // namespace detail

/// Forward pass over `batch` in chunks; argmax ties go to the lowest class.
inline Evaluation evaluate(ModelState& model, const MultimodalBatch& batch, std::size_t chunk = 500) {
  const std::size_t n = batch.size();
  const std::size_t M = model.spec.modalities();
  batch.validate(model.spec.num_classes);
  Evaluation ev;
  ev.preds_uni.assign(M, {});
  ev.reps.assign(M, Tensor());
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    std::vector<std::size_t> rows(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const MultimodalBatch part = batch.subset(rows);
    Graph g;
    auto reps = encode(g, model, part);
    auto fused = fuse_and_predict(g, model, reps);
    loss_sum += multimodal_loss(part.labels, fused.logits).value().item() * static_cast<double>(part.size());
    auto pm = argmax_rows(fused.logits.value());
    ev.preds_multi.insert(ev.preds_multi.end(), pm.begin(), pm.end());
    for (std::size_t m = 0; m < M; ++m) {
      auto pu = argmax_rows(predict_unimodal(g, model, m, reps[m]).value());
      ev.preds_uni[m].insert(ev.preds_uni[m].end(), pu.begin(), pu.end());
      detail::append_rows(ev.reps[m], reps[m].value());
    }
    detail::append_rows(ev.fused, fused.fused.value());
  }

  auto& s = ev.summary;
  auto accuracy = [&](const std::vector<int>& p) {
    if (n == 0) return 0.0;
    std::size_t ok = 0;
    for (std::size_t i = 0; i < n; ++i) ok += p[i] == batch.labels[i];
    return static_cast<double>(ok) / static_cast<double>(n);
  };
  s.acc_multi = accuracy(ev.preds_multi);
  for (const auto& p : ev.preds_uni) s.acc_uni.push_back(accuracy(p));
  s.consistency = consistency(batch.labels, ev.preds_uni);
  s.loss_multi = n ? loss_sum / static_cast<double>(n) : 0.0;

  if (M >= 2) {
    double sum[3] = {0, 0, 0};
    std::size_t cnt[3] = {0, 0, 0};
    for (auto [a, b] : modality_pairs(M)) {
      const PairSets sets = categorize_pairs(batch.labels, ev.preds_uni[a], ev.preds_uni[b]);
      for (auto i : sets.positive) sum[0] += detail::row_cosine(ev.reps[a], ev.reps[b], i), ++cnt[0];
      for (auto sp : sets.semi_positive) sum[1] += detail::row_cosine(ev.reps[a], ev.reps[b], sp.index), ++cnt[1];
      for (auto i : sets.negative) sum[2] += detail::row_cosine(ev.reps[a], ev.reps[b], i), ++cnt[2];
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    s.cos_positive = cnt[0] ? sum[0] / static_cast<double>(cnt[0]) : nan;
    s.cos_semi = cnt[1] ? sum[1] / static_cast<double>(cnt[1]) : nan;
    s.cos_negative = cnt[2] ? sum[2] / static_cast<double>(cnt[2]) : nan;
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_total = 0.0;
  double train_l_uni = 0.0;
  double train_l_multi = 0.0;
  double train_l_mmc = 0.0;
  std::size_t skipped_pairs = 0;  // contrastive terms dropped for an empty numerator
  EvalSummary valid;
};

struct RunMetrics {
  std::size_t modalities = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 1-based; 0 until an epoch completes
  std::optional<EvalSummary> test;
  std::string failure;  // non-empty when the run aborted

  const EpochRecord& best() const { return epochs.at(best_epoch - 1); }
};

struct TrainingDiverged : NumericError {
  TrainingDiverged(const std::string& what, RunMetrics partial) : NumericError(what), metrics(std::move(partial)) {}
  RunMetrics metrics;
};

/// One optimizer step over a chunk of samples split into micro-batches.
/// Each micro-batch loss is weighted by its share of the chunk, so
/// mean-reduced objectives give the same gradient whatever the split.
class Trainer {
 public:
  Trainer(ModelState& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), adam_(model.parameters(), AdamHyper{0.9, 0.999, 1e-8, cfg.weight_decay}) {
    cfg_.validate();
  }

  LossBundle step(const MultimodalBatch& chunk, double lr) {
    const std::size_t n = chunk.size();
    if (n == 0) throw DataError("empty training chunk");
    adam_.zero_grad();
    LossBundle mean;
    for (std::size_t start = 0; start < n; start += cfg_.micro_batch_size) {
      const std::size_t stop = std::min(n, start + cfg_.micro_batch_size);
      std::vector<std::size_t> rows(stop - start);
      std::iota(rows.begin(), rows.end(), start);
      const MultimodalBatch micro = chunk.subset(rows);
      const double weight = static_cast<double>(micro.size()) / static_cast<double>(n);
      Graph g;
      ObjectiveTerms t = build_objective(g, model_, micro, cfg_);
      if (!std::isfinite(t.values.total))
        throw NumericError("non-finite loss (" + std::to_string(t.values.total) + ")");
      g.backward(weight == 1.0 ? t.total : scale(t.total, weight));
      mean.l_uni += weight * t.values.l_uni;
      mean.l_multi += weight * t.values.l_multi;
      mean.l_mmc += weight * t.values.l_mmc;
      mean.total += weight * t.values.total;
      for (const auto& d : t.values.pairs) skipped_ += d.skipped;
    }
    adam_.step(lr);
    return mean;
  }

  /// Contrastive pair terms skipped since the last call.
  std::size_t take_skipped() { return std::exchange(skipped_, 0); }

 private:
  ModelState& model_;
  TrainConfig cfg_;
  Adam adam_;
  std::size_t skipped_ = 0;
};

struct TrainResult {
  ModelState best_model;
  RunMetrics metrics;
};

/// Runs the full schedule on `model` (updated in place) and returns a copy
/// of the parameters from the epoch with the best validation accuracy of the
/// fused classifier, plus per-epoch metrics and the test evaluation of that
/// copy.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, ModelState& model) {
  cfg.validate();
  if (data.spec.modalities != model.spec.modalities())
    throw DimensionError("dataset has " + std::to_string(data.spec.modalities) + " modalities, model has " +
                         std::to_string(model.spec.modalities()));
  data.train.validate(model.spec.num_classes);

  Trainer trainer(model, cfg);
  PlateauSchedule schedule(cfg.learning_rate, cfg.plateau_factor, cfg.plateau_patience);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  std::vector<std::size_t> order(data.train.size());

  TrainResult result{model, {}};
  result.metrics.modalities = model.spec.modalities();
  double best_acc = -1.0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = schedule.lr();
    std::size_t seen = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.effective_batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.effective_batch_size);
        const auto chunk = data.train.subset(std::span(order).subspan(start, stop - start));
        const LossBundle l = trainer.step(chunk, schedule.lr());
        const double w = static_cast<double>(chunk.size());
        rec.train_total += w * l.total;
        rec.train_l_uni += w * l.l_uni;
        rec.train_l_multi += w * l.l_multi;
        rec.train_l_mmc += w * l.l_mmc;
        seen += chunk.size();
      }
    } catch (const NumericError& e) {
      result.metrics.failure = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
      throw TrainingDiverged(result.metrics.failure, result.metrics);
    }
    const double inv = 1.0 / static_cast<double>(seen);
    rec.train_total *= inv;
    rec.train_l_uni *= inv;
    rec.train_l_multi *= inv;
    rec.train_l_mmc *= inv;
    rec.skipped_pairs = trainer.take_skipped();
    rec.valid = evaluate(model, data.valid).summary;
    result.metrics.epochs.push_back(rec);

    if (rec.valid.acc_multi > best_acc) {
      best_acc = rec.valid.acc_multi;
      result.metrics.best_epoch = epoch;
      result.best_model = model;
    }
    schedule.observe(rec.valid.loss_multi);
  }
  result.metrics.test = evaluate(result.best_model, data.test).summary;
  return result;
}

// ---------------------------------------------------------------------------
// Metrics file
//
// Comma-separated with a header row. One `epoch` record per epoch holding
// training losses and validation metrics, then a single `final` record with
// the test metrics of the selected model (its epoch column is the selected
// epoch, its training columns copy that epoch's). Floats are printed with 17
// significant digits so reruns compare byte for byte.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline std::vector<std::string> metrics_header(std::size_t modalities) {
  std::vector<std::string> h{"record", "split", "epoch", "lr", "train_total", "train_l_uni", "train_l_multi",
                             "train_l_mmc", "skipped_pairs", "acc_multi"};
  for (std::size_t m = 0; m < modalities; ++m) h.push_back("acc_uni_" + std::to_string(m));
  for (const char* c : {"both_correct", "both_wrong", "exclusive", "cos_positive", "cos_semi", "cos_negative",
                        "loss_multi"})
    h.emplace_back(c);
  return h;
}

inline std::string format_metrics_csv(const RunMetrics& rm) {
  std::ostringstream os;
  const auto header = metrics_header(rm.modalities);
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  using detail::fmt_double;
  auto line = [&](const char* record, const char* split, const EpochRecord& e, const EvalSummary& s) {
    os << record << ',' << split << ',' << e.epoch << ',' << fmt_double(e.lr) << ',' << fmt_double(e.train_total)
       << ',' << fmt_double(e.train_l_uni) << ',' << fmt_double(e.train_l_multi) << ','
       << fmt_double(e.train_l_mmc) << ',' << e.skipped_pairs << ',' << fmt_double(s.acc_multi);
    for (std::size_t m = 0; m < rm.modalities; ++m)
      os << ',' << fmt_double(m < s.acc_uni.size() ? s.acc_uni[m] : std::numeric_limits<double>::quiet_NaN());
    os << ',' << fmt_double(s.consistency.both_correct) << ',' << fmt_double(s.consistency.both_wrong) << ','
       << fmt_double(s.consistency.exclusive) << ',' << fmt_double(s.cos_positive) << ',' << fmt_double(s.cos_semi)
       << ',' << fmt_double(s.cos_negative) << ',' << fmt_double(s.loss_multi) << '\n';
  };
  for (const auto& e : rm.epochs) line("epoch", "valid", e, e.valid);
  if (rm.test && rm.best_epoch > 0) line("final", "test", rm.best(), *rm.test);
  return os.str();
}

inline void write_metrics_csv(const RunMetrics& rm, const std::filesystem::path& path) {
  io::write_file_atomic(path, format_metrics_csv(rm));
}

/// Parsed metrics file: header plus rows of raw fields.
struct MetricsTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("metrics file has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
  double number(std::size_t row, const std::string& col) const {
    const auto& f = rows.at(row).at(column(col));
    if (f == "nan") return std::numeric_limits<double>::quiet_NaN();
    try {
      return std::stod(f);
    } catch (const std::exception&) {
      throw FormatError("metrics file: bad number '" + f + "' in column " + col);
    }
  }
  std::optional<std::size_t> final_row() const {
    const auto c = column("record");
    for (std::size_t r = rows.size(); r-- > 0;)
      if (rows[r][c] == "final") return r;
    return std::nullopt;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline MetricsTable read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("missing metrics file " + path.string());
  MetricsTable t;
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + ": empty metrics file");
  t.header = split_csv_line(line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto row = split_csv_line(line);
    if (row.size() != t.header.size())
      throw FormatError(path.string() + ": row has " + std::to_string(row.size()) + " fields, header has " +
                        std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Embedding export
//
// CSV header: sample_id,label,block,v0,...,v{W-1} with W = M * d_r.
// Each sample contributes M + 1 rows: block 0..M-1 holds r_m in its first d_r
// value columns (the rest left empty), block "fused" holds r_c.
// ---------------------------------------------------------------------------

struct Embeddings {
  std::vector<std::uint64_t> ids;
  std::vector<int> labels;
  std::vector<Tensor> reps;
  Tensor fused;

  bool operator==(const Embeddings&) const = default;
};

inline Embeddings compute_embeddings(ModelState& model, const MultimodalBatch& batch) {
  Evaluation ev = evaluate(model, batch);
  Embeddings e;
  e.ids = batch.ids;
  if (e.ids.empty()) {
    e.ids.resize(batch.size());
    std::iota(e.ids.begin(), e.ids.end(), std::uint64_t{0});
  }
  e.labels = batch.labels;
  e.reps = std::move(ev.reps);
  e.fused = std::move(ev.fused);
  return e;
}

inline std::string format_embeddings_csv(const Embeddings& e) {
  std::ostringstream os;
  const std::size_t width = e.fused.cols();
  os << "sample_id,label,block";
  for (std::size_t c = 0; c < width; ++c) os << ",v" << c;
  os << '\n';
  auto row = [&](std::size_t i, const std::string& block, std::span<const double> v) {
    os << e.ids[i] << ',' << e.labels[i] << ',' << block;
    for (std::size_t c = 0; c < width; ++c) os << ',' << (c < v.size() ? detail::fmt_double(v[c]) : "");
    os << '\n';
  };
  for (std::size_t i = 0; i < e.labels.size(); ++i) {
    for (std::size_t m = 0; m < e.reps.size(); ++m) row(i, std::to_string(m), e.reps[m].row_span(i));
    row(i, "fused", e.fused.row_span(i));
  }
  return os.str();
}

inline void export_embeddings(ModelState& model, const MultimodalBatch& batch, const std::filesystem::path& path) {
  try {
    io::write_file_atomic(path, format_embeddings_csv(compute_embeddings(model, batch)));
  } catch (const Error& e) {
    throw Error("exporting embeddings to " + path.string() + ": " + e.what());
  }
}

inline Embeddings read_embeddings_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open embeddings file " + path.string());
  std::string line;
  if (!std::getline(f, line)) throw FormatError(path.string() + ": empty embeddings file");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "sample_id" || header[2] != "block")
    throw FormatError(path.string() + ": unexpected embeddings header");
  const std::size_t width = header.size() - 3;
  Embeddings e;
  std::vector<std::vector<double>> reps, fused;
  std::size_t rep_width = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw FormatError(path.string() + ": ragged row");
    std::vector<double> v;
    for (std::size_t c = 3; c < fields.size() && !fields[c].empty(); ++c) v.push_back(std::stod(fields[c]));
    if (fields[2] == "fused") {
      if (v.size() != width) throw FormatError(path.string() + ": short fused row");
      e.ids.push_back(std::stoull(fields[0]));
      e.labels.push_back(std::stoi(fields[1]));
      fused.push_back(std::move(v));
    } else {
      const auto m = static_cast<std::size_t>(std::stoul(fields[2]));
      if (reps.size() <= m) reps.resize(m + 1);
      rep_width = v.size();
      reps[m].insert(reps[m].end(), v.begin(), v.end());
    }
  }
  const std::size_t n = e.labels.size();
  for (auto& r : reps) e.reps.emplace_back(n, rep_width, std::move(r));
  std::vector<double> flat;
  for (auto& r : fused) flat.insert(flat.end(), r.begin(), r.end());
  e.fused = Tensor(n, width, std::move(flat));
  return e;
}

}  // namespace unismmc
