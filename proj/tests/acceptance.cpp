// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Indented lines carry the measurements behind a verdict.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"

using namespace unismmc;
using namespace unismmc::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  int id;
  std::string title;
  bool pass = true;
  std::vector<std::string> notes{};

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& what) { notes.push_back("     " + what); }
};

std::vector<Verdict> verdicts;

void report(Verdict v) {
  std::cout << (v.pass ? "PASS" : "FAIL") << "  criterion " << v.id << ": " << v.title << '\n';
  for (const auto& n : v.notes) std::cout << "        " << n << '\n';
  std::cout.flush();
  verdicts.push_back(std::move(v));
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::pair<Tensor, Tensor> reps_with_cosines(const std::vector<double>& cos) {
  Tensor a(cos.size(), 2), b(cos.size(), 2);
  for (std::size_t i = 0; i < cos.size(); ++i) {
    a(i, 0) = 1.0;
    b(i, 0) = cos[i];
    b(i, 1) = std::sqrt(1.0 - cos[i] * cos[i]);
  }
  return {a, b};
}

PairSets random_sets(std::size_t n, std::mt19937_64& rng, int classes = 3) {
  std::vector<int> y(n), pa(n), pb(n);
  std::uniform_int_distribution<int> cls(0, classes - 1);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = cls(rng);
    pa[i] = cls(rng);
    pb[i] = cls(rng);
  }
  return categorize_pairs(y, pa, pb);
}

// ---------------------------------------------------------------------------

void criterion_1() {
  Verdict v{1, "gradient correctness of every op and of the full objective"};
  const auto t0 = Clock::now();
  std::size_t checked = 0;
  double worst = 0.0;
  bool ops_ok = true;
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      const auto r = check_leaf_gradients(c.fn, c.inputs(rng));
      checked += r.checked;
      worst = std::max(worst, r.worst_ratio);
      if (!r.ok && ops_ok) {
        ops_ok = false;
        v.note(c.name + " seed " + std::to_string(seed) + ": " + r.detail);
      }
    }
  }
  v.require(ops_ok, std::to_string(op_cases().size()) + " ops x 100 seeds");

  TrainConfig cfg;  // unis_mmc, tau 0.07, lambda 0.1
  bool obj_ok = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = check_toy_objective(seed, cfg);
    checked += r.checked;
    worst = std::max(worst, r.worst_ratio);
    if (!r.ok && obj_ok) {
      obj_ok = false;
      v.note("objective seed " + std::to_string(seed) + ": " + r.detail);
    }
  }
  v.require(obj_ok, "full objective on the 4-sample M=2 K=3 toy model x 100 seeds");
  const double elapsed = seconds_since(t0);
  v.require(elapsed < 60.0, "runtime " + fmt(elapsed, 3) + " s (limit 60 s)");
  v.note(std::to_string(checked) + " partial derivatives, worst |error| / tolerance = " + fmt(worst, 4));
  report(std::move(v));
}

void criterion_2() {
  Verdict v{2, "detach semantics of the contrastive term"};
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> size(2, 10);
  std::bernoulli_distribution side(0.5);
  bool detached_zero = true, live_nonzero = false;
  double max_live = 0.0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = size(rng);
    PairSets s;
    for (std::size_t i = 0; i < n; ++i) s.semi_positive.push_back({i, side(rng) ? Side::a : Side::b});
    Graph g;
    auto a = g.leaf(random_tensor(n, 5, rng)), b = g.leaf(random_tensor(n, 5, rng));
    g.backward(pairwise_mmc_loss(a, b, s, {0.07, true, true}));
    for (const auto& sp : s.semi_positive) {
      const Tensor& detached = sp.correct == Side::a ? a.grad() : b.grad();
      const Tensor& live = sp.correct == Side::a ? b.grad() : a.grad();
      for (std::size_t c = 0; c < 5; ++c) {
        detached_zero = detached_zero && detached(sp.index, c) == 0.0;
        max_live = std::max(max_live, std::abs(live(sp.index, c)));
      }
    }
  }
  live_nonzero = max_live > 0.0;
  v.require(detached_zero, "semi-positive-only batches: every detached row has exactly zero gradient (" +
                               std::to_string(trials) + " batches)");
  v.require(live_nonzero, "semi-positive-only batches: some non-detached row has nonzero gradient (max |grad| = " +
                              fmt(max_live) + ")");
  if (!live_nonzero)
    v.note("with only semi-positive pairs the numerator and denominator sum the same terms, "
           "so the term is identically 0 and no row can receive gradient");

  // Same check with negatives present, where the live rows do carry gradient.
  bool mixed_detached_zero = true;
  double mixed_live = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = size(rng) + 1;
    PairSets s;
    for (std::size_t i = 0; i + 1 < n; ++i) s.semi_positive.push_back({i, side(rng) ? Side::a : Side::b});
    s.negative.push_back(n - 1);
    Graph g;
    auto a = g.leaf(random_tensor(n, 5, rng)), b = g.leaf(random_tensor(n, 5, rng));
    g.backward(pairwise_mmc_loss(a, b, s, {0.07, true, true}));
    double live_norm = 0.0;
    for (const auto& sp : s.semi_positive) {
      const Tensor& detached = sp.correct == Side::a ? a.grad() : b.grad();
      const Tensor& live = sp.correct == Side::a ? b.grad() : a.grad();
      for (std::size_t c = 0; c < 5; ++c) {
        mixed_detached_zero = mixed_detached_zero && detached(sp.index, c) == 0.0;
        live_norm += std::abs(live(sp.index, c));
      }
    }
    mixed_live = std::min(mixed_live, live_norm);
  }
  v.note(std::string("semi-positive + negative batches: detached rows exactly zero: ") +
         (mixed_detached_zero ? "yes" : "no") + ", smallest live-row gradient mass " + fmt(mixed_live));
  report(std::move(v));
}

void criterion_3() {
  Verdict v{3, "loss oracles"};
  const auto [a, b] = reps_with_cosines({0.8, 0.2, 0.5});
  PairSets s{{0}, {{1, Side::a}}, {2}};
  Graph g;
  const double got = pairwise_mmc_loss(g.constant(a), g.constant(b), s, {1.0, true, true}).value().item();
  const double oracle =
      -std::log((std::exp(0.8) + std::exp(0.2)) / (std::exp(0.8) + std::exp(0.2) + std::exp(0.5)));
  v.require(std::abs(got - oracle) <= 1e-9,
            "3-sample value " + fmt(got, 12) + " vs closed form " + fmt(oracle, 12) + " (tol 1e-9)");
  v.note("the stated approximation 0.390936 differs from the closed form by " + fmt(std::abs(oracle - 0.390936), 3));

  const std::vector<int> y{0, 3, 1};
  std::vector<Var> logits{g.constant(Tensor(3, 4)), g.constant(Tensor(3, 4))};
  const double uni = unimodal_loss(y, logits).value().item();
  v.require(std::abs(uni - 2.0 * std::log(4.0)) <= 1e-12, "uniform unimodal loss " + fmt(uni, 15) + " = 2 ln 4");

  std::mt19937_64 rng(3);
  bool exact_zero = true;
  for (int t = 0; t < 100; ++t) {
    PairSets sn = random_sets(8, rng);
    for (auto i : sn.negative) sn.positive.push_back(i);
    sn.negative.clear();
    Graph h;
    const double val =
        pairwise_mmc_loss(h.constant(random_tensor(8, 4, rng)), h.constant(random_tensor(8, 4, rng)), sn).value().item();
    exact_zero = exact_zero && val == 0.0;
  }
  v.require(exact_zero, "empty negative set gives exactly 0 (100 random batches)");
  report(std::move(v));
}

void criterion_4() {
  Verdict v{4, "pair partition and consistency proportions"};
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> size(1, 64);
  std::uniform_int_distribution<int> classes(2, 10);
  const int batches = 20000;
  bool partition = true, sums = true;
  double worst_sum = 0.0;
  for (int t = 0; t < batches; ++t) {
    const std::size_t n = size(rng);
    const int k = classes(rng);
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::vector<int> y(n), pa(n), pb(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = cls(rng);
      pa[i] = cls(rng);
      pb[i] = cls(rng);
    }
    const PairSets s = categorize_pairs(y, pa, pb);
    std::vector<int> seen(n, 0);
    for (auto i : s.positive) seen[i] += (pa[i] == y[i] && pb[i] == y[i]) ? 1 : 100;
    for (auto sp : s.semi_positive) {
      const bool a_ok = pa[sp.index] == y[sp.index], b_ok = pb[sp.index] == y[sp.index];
      seen[sp.index] += (a_ok != b_ok && (sp.correct == Side::a) == a_ok) ? 1 : 100;
    }
    for (auto i : s.negative) seen[i] += (pa[i] != y[i] && pb[i] != y[i]) ? 1 : 100;
    for (int c : seen) partition = partition && c == 1;
    const Consistency c = consistency(y, {pa, pb});
    const double err = std::abs(c.both_correct + c.both_wrong + c.exclusive - 1.0);
    worst_sum = std::max(worst_sum, err);
    sums = sums && err <= 1e-9;
  }
  v.require(partition, std::to_string(batches) + " random batches split into disjoint, correctly labelled sets");
  v.require(sums, "consistency proportions sum to 1 (worst deviation " + fmt(worst_sum, 3) + ")");
  report(std::move(v));
}

void criterion_5() {
  Verdict v{5, "scale invariance of the contrastive term"};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> log_scale(std::log(1e-3), std::log(1e3));
  std::uniform_int_distribution<std::size_t> size(2, 32);
  double worst = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = size(rng);
    const PairSets s = random_sets(n, rng);
    const Tensor a = random_tensor(n, 8, rng), b = random_tensor(n, 8, rng);
    Tensor a2 = a, b2 = b;
    for (std::size_t i = 0; i < n; ++i) {
      const double sa = std::exp(log_scale(rng)), sb = std::exp(log_scale(rng));
      for (std::size_t c = 0; c < 8; ++c) {
        a2(i, c) *= sa;
        b2(i, c) *= sb;
      }
    }
    for (double tau : {0.07, 1.0}) {
      Graph g;
      const MmcOptions opt{tau, true, true};
      const double l1 = pairwise_mmc_loss(g.constant(a), g.constant(b), s, opt).value().item();
      const double l2 = pairwise_mmc_loss(g.constant(a2), g.constant(b2), s, opt).value().item();
      worst = std::max(worst, std::abs(l1 - l2));
    }
  }
  v.require(worst < 1e-9, "largest change under per-row scales in [1e-3, 1e3]: " + fmt(worst, 3) + " (" +
                              std::to_string(trials) + " batches, tau 0.07 and 1)");
  report(std::move(v));
}

void criterion_6(const Dataset& data, const TrainConfig& base) {
  Verdict v{6, "gradient accumulation equivalence"};
  std::vector<std::size_t> rows(128);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto chunk = data.train.subset(rows);
  for (Method method : {Method::mt_mml, Method::agg_mm}) {
    TrainConfig acc = base;
    acc.method = method;
    acc.micro_batch_size = 32;
    acc.effective_batch_size = 128;
    TrainConfig full = acc;
    full.micro_batch_size = 128;
    ModelState m_acc = init_model(acc.model.spec_for(data.spec), 0);
    ModelState m_full = m_acc;
    Trainer t_acc(m_acc, acc), t_full(m_full, full);
    t_acc.step(chunk, acc.learning_rate);
    t_full.step(chunk, full.learning_rate);
    double worst = 0.0;
    const auto pa = m_acc.parameters(), pf = m_full.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i)
      for (std::size_t k = 0; k < pa[i]->value.size(); ++k)
        worst = std::max(worst, std::abs(pa[i]->value[k] - pf[i]->value[k]));
    v.require(worst <= 1e-12, std::string(to_string(method)) + ": 4 x 32 vs 1 x 128 Adam update, max |diff| " +
                                  fmt(worst, 3));
  }
  report(std::move(v));
}

// ---------------------------------------------------------------------------

struct BenchRun {
  std::string method;
  std::uint64_t seed;
  RunMetrics metrics;
  double seconds;
};

std::vector<BenchRun> run_benchmark(const Dataset& data, const ExperimentConfig& ec) {
  std::vector<BenchRun> runs;
  for (const char* name : {"agg_mm", "mt_mml", "unis_mmc", "unis_mmc_no_semi_no_neg"}) {
    const MethodVariant mv = parse_method_variant(name);
    for (std::uint64_t seed : {0, 1, 2}) {
      const TrainConfig cfg = run_train_config(ec, mv, seed);
      ModelState model = init_model(cfg.model.spec_for(data.spec), seed);
      const auto t0 = Clock::now();
      TrainResult r = train(cfg, data, model);
      const double s = seconds_since(t0);
      std::cerr << "  benchmark " << name << " seed " << seed << ": test acc " << pct(r.metrics.test->acc_multi)
                << " (" << fmt(s, 3) << " s)\n";
      runs.push_back({name, seed, std::move(r.metrics), s});
    }
  }
  return runs;
}

struct MethodMeans {
  double test_acc = 0, test_both_correct = 0, valid_both_correct = 0, valid_both_wrong = 0;
};

MethodMeans means(const std::vector<BenchRun>& runs, const std::string& method) {
  MethodMeans m;
  double n = 0;
  for (const auto& r : runs) {
    if (r.method != method) continue;
    m.test_acc += r.metrics.test->acc_multi;
    m.test_both_correct += r.metrics.test->consistency.both_correct;
    m.valid_both_correct += r.metrics.best().valid.consistency.both_correct;
    m.valid_both_wrong += r.metrics.best().valid.consistency.both_wrong;
    ++n;
  }
  m.test_acc /= n;
  m.test_both_correct /= n;
  m.valid_both_correct /= n;
  m.valid_both_wrong /= n;
  return m;
}

void criteria_7_to_9(const Dataset& data, const ExperimentConfig& ec) {
  const auto runs = run_benchmark(data, ec);
  const MethodMeans agg = means(runs, "agg_mm"), mt = means(runs, "mt_mml"), un = means(runs, "unis_mmc"),
                    abl = means(runs, "unis_mmc_no_semi_no_neg");
  double slowest = 0.0;
  for (const auto& r : runs) slowest = std::max(slowest, r.seconds);

  Verdict v7{7, "semi70 benchmark ordering unis_mmc > mt_mml >= agg_mm, margin >= 1 point over agg_mm"};
  v7.note("mean test acc over seeds 0-2: agg_mm " + pct(agg.test_acc) + ", mt_mml " + pct(mt.test_acc) +
          ", unis_mmc " + pct(un.test_acc) + ", unis_mmc_no_semi_no_neg " + pct(abl.test_acc));
  v7.require(un.test_acc > mt.test_acc, "unis_mmc > mt_mml");
  v7.require(mt.test_acc >= agg.test_acc, "mt_mml >= agg_mm");
  v7.require(un.test_acc - agg.test_acc >= 0.01,
             "unis_mmc - agg_mm = " + fmt(100.0 * (un.test_acc - agg.test_acc), 3) + " points (need >= 1)");
  v7.require(slowest < 600.0, "slowest run " + fmt(slowest, 3) + " s (limit 600 s)");
  report(std::move(v7));

  Verdict v8{8, "validation consistency at the best epoch, full unis_mmc vs no-semi-no-neg ablation"};
  v8.require(un.valid_both_correct > abl.valid_both_correct,
             "both_correct " + pct(un.valid_both_correct) + " > " + pct(abl.valid_both_correct));
  v8.require(un.valid_both_wrong < abl.valid_both_wrong,
             "both_wrong " + pct(un.valid_both_wrong) + " < " + pct(abl.valid_both_wrong));
  report(std::move(v8));

  Verdict v9{9, "test both-correct proportion unis_mmc > mt_mml"};
  v9.require(un.test_both_correct > mt.test_both_correct,
             "both_correct " + pct(un.test_both_correct) + " > " + pct(mt.test_both_correct));
  report(std::move(v9));
}

void criterion_10(const Dataset& bench) {
  Verdict v{10, "determinism and persistence"};
  const auto dir = fs::temp_directory_path() / "unismmc_acceptance_c10";
  fs::remove_all(dir);

  SynthSpec spec = bench.spec;
  spec.train = 600;
  spec.valid = 200;
  spec.test = 200;
  const Dataset small = generate(spec);
  ExperimentConfig ec;
  ec.synth = spec;
  ec.methods = {parse_method_variant("unis_mmc")};
  ec.seeds = {0};
  ec.train.learning_rate = 1e-3;
  ec.train.max_epochs = 3;
  const auto r1 = run_one(ec, small, ec.methods[0], 0, dir / "first");
  const auto r2 = run_one(ec, small, ec.methods[0], 0, dir / "second");
  bool identical = r1.error.empty() && r2.error.empty();
  for (const char* f : {"metrics.csv", "checkpoint.ummc", "embeddings_test.csv"})
    identical = identical && io::read_file(dir / "first" / f) == io::read_file(dir / "second" / f);
  v.require(identical, "two full runs with one config give byte-identical metrics, checkpoint and embeddings");

  const auto bytes = serialize_dataset(bench);
  save_dataset(bench, dir / "bench.ummc");
  const Dataset back = load_dataset(dir / "bench.ummc");
  v.require(back == bench && serialize_dataset(back) == bytes && io::read_file(dir / "bench.ummc") == bytes,
            "dataset round trip is bitwise exact (" + std::to_string(bytes.size()) + " bytes)");

  const ModelState model = load_checkpoint(dir / "first" / "checkpoint.ummc");
  save_checkpoint(model, dir / "again.ummc");
  v.require(load_checkpoint(dir / "again.ummc") == model &&
                io::read_file(dir / "again.ummc") == io::read_file(dir / "first" / "checkpoint.ummc"),
            "checkpoint round trip is bitwise exact");
  fs::remove_all(dir);
  report(std::move(v));
}

}  // namespace

int main() {
  const fs::path root = UNISMMC_SOURCE_DIR;
  try {
    const auto t0 = Clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();

    const SynthSpec bench_spec =
        synth_spec_from_json(schema::parse(io::read_file(root / "configs/semi70.json"), "semi70.json"), "semi70.json");
    const Dataset bench = generate(bench_spec);
    const ExperimentConfig ec = load_experiment_config(root / "configs/semi70_sweep.json");
    criterion_6(bench, ec.train);
    criteria_7_to_9(bench, ec);
    criterion_10(bench);

    std::size_t failed = 0;
    for (const auto& v : verdicts) failed += !v.pass;
    std::cout << (verdicts.size() - failed) << "/" << verdicts.size() << " criteria passed in "
              << fmt(seconds_since(t0), 4) << " s\n";
    return failed ? 1 : 0;
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance suite aborted: " << e.what() << '\n';
    return 1;
  }
}
