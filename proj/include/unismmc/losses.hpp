// Training objectives: cross-entropy terms for unimodal and fused heads, the
// unimodality-supervised contrastive term with its pair categorization, and
// the unsupervised / supervised cross-modal contrastive baselines.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "unismmc/autodiff.hpp"

namespace unismmc {

/// Which modality of an (a, b) pair predicted the label correctly.
enum class Side { a, b };

struct SemiPositive {
  std::size_t index;
  Side correct;
  bool operator==(const SemiPositive&) const = default;
};

/// Partition of batch indices for one modality pair.
///   positive:      both unimodal predictions correct
///   semi_positive: exactly one correct (annotated with which)
///   negative:      both wrong
struct PairSets {
  std::vector<std::size_t> positive;
  std::vector<SemiPositive> semi_positive;
  std::vector<std::size_t> negative;

  std::size_t size() const { return positive.size() + semi_positive.size() + negative.size(); }
  bool operator==(const PairSets&) const = default;
};

inline PairSets categorize_pairs(std::span<const int> labels, std::span<const int> preds_a,
                                 std::span<const int> preds_b) {
  if (preds_a.size() != labels.size() || preds_b.size() != labels.size())
    throw AlignmentError("categorize_pairs: " + std::to_string(labels.size()) + " labels but " +
                         std::to_string(preds_a.size()) + " / " + std::to_string(preds_b.size()) + " predictions");
  PairSets s;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool ok_a = preds_a[i] == labels[i];
    const bool ok_b = preds_b[i] == labels[i];
    if (ok_a && ok_b)
      s.positive.push_back(i);
    else if (ok_a)
      s.semi_positive.push_back({i, Side::a});
    else if (ok_b)
      s.semi_positive.push_back({i, Side::b});
    else
      s.negative.push_back(i);
  }
  return s;
}

/// Unordered modality pairs (i, j), i < j, in lexicographic order. Pair
/// sets and diagnostics for M modalities are indexed in this order.
inline std::vector<std::pair<std::size_t, std::size_t>> modality_pairs(std::size_t modalities) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < modalities; ++i)
    for (std::size_t j = i + 1; j < modalities; ++j) out.emplace_back(i, j);
  return out;
}

/// Row-wise argmax; ties resolve to the lowest class index.
inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Var cross_entropy(std::span<const int> labels, const Var& logits) {
  const Tensor& z = logits.value();
  if (z.rows() != labels.size())
    throw AlignmentError("cross_entropy: " + std::to_string(z.rows()) + " logit rows but " +
                         std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw DimensionError("cross_entropy: empty batch");
  Tensor onehot(z.rows(), z.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= z.cols())
      throw DataError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) + " outside [0, " +
                      std::to_string(z.cols()) + ")");
    onehot(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  Graph& g = logits.graph();
  Var picked = sum(mul(log_softmax(logits), g.constant(std::move(onehot))));
  return scale(picked, -1.0 / static_cast<double>(labels.size()));
}

/// Sum over modalities of the batch-mean unimodal cross-entropy.
inline Var unimodal_loss(std::span<const int> labels, const std::vector<Var>& unimodal_logits) {
  if (unimodal_logits.empty()) throw ConfigError("unimodal_loss: needs at least one modality");
  Var total = cross_entropy(labels, unimodal_logits.front());
  for (std::size_t m = 1; m < unimodal_logits.size(); ++m) total = add(total, cross_entropy(labels, unimodal_logits[m]));
  return total;
}

inline Var multimodal_loss(std::span<const int> labels, const Var& fused_logits) {
  return cross_entropy(labels, fused_logits);
}

/// Switches for the ablations of the contrastive term.
///   use_semi = false: semi-positive samples leave the numerator and sit in
///                     the denominator only, without any detach.
///   use_neg  = false: negative samples are dropped from the denominator.
struct MmcOptions {
  double temperature = 0.07;
  bool use_semi = true;
  bool use_neg = true;
};

struct PairDiagnostics {
  std::size_t positive = 0;
  std::size_t semi_positive = 0;
  std::size_t negative = 0;
  double mean_cos_positive = std::numeric_limits<double>::quiet_NaN();
  double mean_cos_semi = std::numeric_limits<double>::quiet_NaN();
  double mean_cos_negative = std::numeric_limits<double>::quiet_NaN();
  /// The numerator set was empty, so the pair contributed 0.
  bool skipped = false;
};

/// Contrastive loss for one modality pair:
///
///   -log( sum_{n in P u S} exp(cos(a_n, b_n)/tau) / sum_{n in B} exp(cos(a_n, b_n)/tau) )
///
/// For every semi-positive sample the correct modality's row enters through a
/// detach barrier, so only the wrong modality moves toward it. Returns an
/// exact 0 constant when the numerator set is empty.
inline Var pairwise_mmc_loss(const Var& rep_a, const Var& rep_b, const PairSets& sets, const MmcOptions& opt = {},
                             PairDiagnostics* diag = nullptr) {
  Graph& g = rep_a.graph();
  g.check_owner(rep_b);
  if (!(opt.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  const std::size_t n = rep_a.value().rows();
  if (rep_b.value().shape() != rep_a.value().shape())
    throw DimensionError("pairwise_mmc_loss: representation shapes differ " + to_string(rep_a.shape()) + " vs " +
                         to_string(rep_b.shape()));
  if (sets.size() != n)
    throw AlignmentError("pairwise_mmc_loss: pair sets cover " + std::to_string(sets.size()) + " samples, batch has " +
                         std::to_string(n));

  // Row i of the effective representation comes from index i (live) or
  // n + i (detached copy).
  std::vector<std::size_t> rows_a(n), rows_b(n);
  for (std::size_t i = 0; i < n; ++i) rows_a[i] = rows_b[i] = i;
  bool any_detached = false;
  if (opt.use_semi) {
    for (const auto& s : sets.semi_positive) {
      if (s.index >= n) throw AlignmentError("pair set index out of range");
      (s.correct == Side::a ? rows_a : rows_b)[s.index] = n + s.index;
      any_detached = true;
    }
  }
  Var eff_a = rep_a, eff_b = rep_b;
  if (any_detached) {
    eff_a = select_rows(concat({rep_a, detach(rep_a)}, 0), rows_a);
    eff_b = select_rows(concat({rep_b, detach(rep_b)}, 0), rows_b);
  }
  Var cos = cosine_similarity(eff_a, eff_b);

  std::vector<std::size_t> numer(sets.positive.begin(), sets.positive.end());
  std::vector<std::size_t> denom = numer;
  for (const auto& s : sets.semi_positive) {
    if (opt.use_semi) numer.push_back(s.index);
    denom.push_back(s.index);
  }
  if (opt.use_neg) denom.insert(denom.end(), sets.negative.begin(), sets.negative.end());
  std::sort(numer.begin(), numer.end());
  std::sort(denom.begin(), denom.end());

  if (diag) {
    const Tensor& c = cos.value();
    auto mean_of = [&](auto first, auto last, auto index_of) {
      if (first == last) return std::numeric_limits<double>::quiet_NaN();
      double s = 0.0;
      std::size_t k = 0;
      for (auto it = first; it != last; ++it, ++k) s += c[index_of(*it)];
      return s / static_cast<double>(k);
    };
    auto self = [](std::size_t i) { return i; };
    diag->positive = sets.positive.size();
    diag->semi_positive = sets.semi_positive.size();
    diag->negative = sets.negative.size();
    diag->mean_cos_positive = mean_of(sets.positive.begin(), sets.positive.end(), self);
    diag->mean_cos_semi = mean_of(sets.semi_positive.begin(), sets.semi_positive.end(),
                                  [](const SemiPositive& s) { return s.index; });
    diag->mean_cos_negative = mean_of(sets.negative.begin(), sets.negative.end(), self);
    diag->skipped = numer.empty();
  }
  if (numer.empty()) return g.constant(Tensor::scalar(0.0));

  Var logits = scale(cos, 1.0 / opt.temperature);
  return sub(logsumexp(select_rows(logits, denom)), logsumexp(select_rows(logits, numer)));
}

/// Sum of pairwise terms over all unordered modality pairs. `sets` follows
/// modality_pairs() order.
inline Var total_mmc_loss(const std::vector<Var>& reps, const std::vector<PairSets>& sets, const MmcOptions& opt = {},
                          std::vector<PairDiagnostics>* diags = nullptr) {
  if (reps.size() < 2) throw ConfigError("contrastive loss needs at least 2 modalities");
  const auto pairs = modality_pairs(reps.size());
  if (sets.size() != pairs.size())
    throw ConfigError("expected " + std::to_string(pairs.size()) + " pair sets, got " + std::to_string(sets.size()));
  if (diags) diags->assign(pairs.size(), {});
  Var total;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    Var term = pairwise_mmc_loss(reps[pairs[p].first], reps[pairs[p].second], sets[p], opt,
                                 diags ? &(*diags)[p] : nullptr);
    total = p == 0 ? term : add(total, term);
  }
  return total;
}

/// l_uni + l_multi + lambda * l_mmc.
inline Var total_objective(const Var& l_uni, const Var& l_multi, const Var& l_mmc, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("loss coefficient lambda must be >= 0");
  return add(add(l_uni, l_multi), scale(l_mmc, lambda));
}

enum class ContrastiveMode { unsupervised, supervised };

/// Cross-modal InfoNCE averaged over both anchor directions.
///
/// unsupervised: the positive of anchor a_i is b_i; every other b_j is a negative.
/// supervised:   positives of a_i are all b_j with y_j == y_i (b_i included);
///               the anchor loss averages -log softmax over its positives.
inline Var baseline_contrastive(const Var& rep_a, const Var& rep_b, std::span<const int> labels, ContrastiveMode mode,
                                double temperature) {
  Graph& g = rep_a.graph();
  g.check_owner(rep_b);
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (rep_a.value().shape() != rep_b.value().shape())
    throw DimensionError("baseline_contrastive: representation shapes differ " + to_string(rep_a.shape()) + " vs " +
                         to_string(rep_b.shape()));
  const std::size_t n = rep_a.value().rows();
  if (labels.size() != n) throw AlignmentError("baseline_contrastive: label count differs from batch size");
  if (n < 2) throw ConfigError("baseline_contrastive: a batch of " + std::to_string(n) + " has no negatives");

  Tensor weights(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == ContrastiveMode::unsupervised) {
      weights(i, i) = 1.0 / static_cast<double>(n);
      continue;
    }
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += labels[j] == labels[i];
    for (std::size_t j = 0; j < n; ++j)
      if (labels[j] == labels[i]) weights(i, j) = 1.0 / static_cast<double>(count * n);
  }
  // The positive relation is symmetric, so the same weights serve both directions.
  Var w = g.constant(std::move(weights));
  Var sim = scale(matmul(normalize_rows(rep_a), transpose(normalize_rows(rep_b))), 1.0 / temperature);
  Var a_to_b = sum(mul(log_softmax(sim), w));
  Var b_to_a = sum(mul(log_softmax(transpose(sim)), w));
  return scale(add(a_to_b, b_to_a), -0.5);
}

/// Scalar values of one objective evaluation, plus per-pair diagnostics.
struct LossBundle {
  double l_uni = 0.0;
  double l_multi = 0.0;
  double l_mmc = 0.0;
  double total = 0.0;
  std::vector<PairDiagnostics> pairs;
};

}  // namespace unismmc
