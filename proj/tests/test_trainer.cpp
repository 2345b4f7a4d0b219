#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"

using namespace unismmc;
using namespace unismmc::testing;

namespace fs = std::filesystem;

namespace {

SynthSpec tiny_spec(std::uint64_t seed = 5) {
  SynthSpec s;
  s.num_classes = 4;
  s.feature_dims = {8, 6};
  s.train = 256;
  s.valid = 64;
  s.test = 64;
  s.noise_sigma = {1.0, 1.0};
  s.seed = seed;
  return s;
}

TrainConfig tiny_config(Method method) {
  TrainConfig c;
  c.method = method;
  c.learning_rate = 1e-3;
  c.max_epochs = 3;
  c.model.encoder_hidden = {12};
  c.model.representation_dim = 6;
  c.model.classifier_hidden = {8, 8};
  return c;
}

MultimodalBatch first_rows(const MultimodalBatch& b, std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return b.subset(rows);
}

double max_abs_diff(const ModelState& a, const ModelState& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i]->value.size(); ++k)
      worst = std::max(worst, std::abs(pa[i]->value[k] - pb[i]->value[k]));
  return worst;
}

bool same_values(const Mlp& a, const Mlp& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i)
    if (!(a.layers[i].weight.value == b.layers[i].weight.value && a.layers[i].bias.value == b.layers[i].bias.value))
      return false;
  return true;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("unismmc_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Adam, ScalarFirstStepMovesByLearningRate) {
  std::vector<double> p{2.0};
  const std::vector<double> g{1.0};
  AdamMoments mom;
  adam_step(p, g, mom, AdamHyper{}, 0.1);
  // m_hat = 1, v_hat = 1 after bias correction.
  EXPECT_NEAR(p[0], 2.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(mom.step, 1u);
  EXPECT_NEAR(mom.first[0], 0.1, 1e-15);
  EXPECT_NEAR(mom.second[0], 0.001, 1e-15);
}

TEST(Adam, MatchesScalarRecurrenceOverSteps) {
  std::vector<double> p{0.5};
  AdamMoments mom;
  double ref = 0.5, m = 0.0, v = 0.0;
  const double lr = 0.01, wd = 0.05;
  for (int t = 1; t <= 20; ++t) {
    const double g = std::sin(0.7 * t) + 0.3;
    const std::vector<double> grad{g};
    adam_step(p, grad, mom, AdamHyper{0.9, 0.999, 1e-8, wd}, lr);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref *= 1.0 - lr * wd;
    ref -= lr * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], ref, 1e-14) << "step " << t;
  }
}

TEST(Adam, ZeroGradientWithoutDecayLeavesParamsUnchanged) {
  std::vector<double> p{1.5, -2.0, 0.0};
  const std::vector<double> g(3, 0.0);
  AdamMoments mom;
  for (int i = 0; i < 5; ++i) adam_step(p, g, mom, AdamHyper{}, 0.1);
  EXPECT_EQ(p, (std::vector<double>{1.5, -2.0, 0.0}));
}

TEST(Adam, ZeroGradientWithDecayShrinksGeometrically) {
  std::vector<double> p{3.0, -1.0};
  const std::vector<double> g(2, 0.0);
  AdamMoments mom;
  const double lr = 0.05, wd = 0.2;
  for (int k = 1; k <= 10; ++k) {
    adam_step(p, g, mom, AdamHyper{0.9, 0.999, 1e-8, wd}, lr);
    EXPECT_NEAR(p[0], 3.0 * std::pow(1.0 - lr * wd, k), 1e-14);
    EXPECT_NEAR(p[1], -1.0 * std::pow(1.0 - lr * wd, k), 1e-14);
  }
}

TEST(Adam, NonFiniteGradientNamesParameterAndLeavesItUntouched) {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.5, std::nan("")};
  AdamMoments mom;
  try {
    adam_step(p, g, mom, AdamHyper{}, 0.1, "encoder0.layer1.weight");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder0.layer1.weight"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(mom.step, 0u);
}

TEST(Adam, SkipsParametersWithoutGradient) {
  Parameter used("used", Tensor{{1.0}}), unused("unused", Tensor{{1.0}});
  Adam opt({&used, &unused}, AdamHyper{0.9, 0.999, 1e-8, 0.5});
  Graph g;
  g.backward(sum(g.parameter(used)));
  opt.step(0.1);
  EXPECT_NE(used.value(0, 0), 1.0);
  EXPECT_EQ(unused.value(0, 0), 1.0);
}

TEST(PlateauSchedule, DropsByFactorAfterPatienceBadEpochs) {
  PlateauSchedule s(1e-3, 0.5, 3);
  EXPECT_FALSE(s.observe(1.0));
  EXPECT_FALSE(s.observe(1.0));  // equal is not an improvement
  EXPECT_FALSE(s.observe(1.2));
  EXPECT_DOUBLE_EQ(s.lr(), 1e-3);
  EXPECT_TRUE(s.observe(1.1));
  EXPECT_DOUBLE_EQ(s.lr(), 5e-4);
  EXPECT_FALSE(s.observe(0.9));
  EXPECT_FALSE(s.observe(0.95));
  EXPECT_FALSE(s.observe(0.95));
  EXPECT_TRUE(s.observe(0.95));
  EXPECT_DOUBLE_EQ(s.lr(), 2.5e-4);
}

TEST(PlateauSchedule, RateIsNonIncreasing) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PlateauSchedule s(0.1, 0.3, 2);
  double prev = s.lr();
  for (int i = 0; i < 200; ++i) {
    const bool dropped = s.observe(u(rng));
    EXPECT_LE(s.lr(), prev);
    EXPECT_EQ(dropped, s.lr() < prev);
    if (dropped) {
      EXPECT_DOUBLE_EQ(s.lr(), prev * 0.3);
    }
    prev = s.lr();
  }
}

TEST(PlateauSchedule, InvalidSettingsRejected) {
  EXPECT_THROW(PlateauSchedule(1e-3, 1.0, 3), ConfigError);
  EXPECT_THROW(PlateauSchedule(1e-3, 0.5, 0), ConfigError);
}

TEST(TrainConfig, ValidationRules) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.effective_batch_size = 100; });
  bad([](TrainConfig& c) { c.micro_batch_size = 0; });
  bad([](TrainConfig& c) { c.temperature = 0.0; });
  bad([](TrainConfig& c) { c.lambda = -0.1; });
  bad([](TrainConfig& c) { c.plateau_factor = 1.0; });
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Objective, GradientMatchesFiniteDifferencesForEveryMethod) {
  for (const char* name : {"unis_mmc", "unis_mmc_no_semi", "unis_mmc_no_neg", "unis_mmc_no_semi_no_neg", "mt_mml",
                           "agg_mm", "unsup_mmc", "sup_mmc"}) {
    const MethodVariant mv = parse_method_variant(name);
    TrainConfig cfg;
    cfg.method = mv.method;
    cfg.use_semi = mv.use_semi;
    cfg.use_neg = mv.use_neg;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = check_toy_objective(seed, cfg);
      ASSERT_TRUE(r.ok) << name << " seed " << seed << ": " << r.detail;
    }
  }
}

TEST(Objective, MethodsComposeExpectedTerms) {
  ModelState m = toy_model(4);
  const auto batch = toy_batch(m.spec, 8, 9);
  TrainConfig cfg;
  auto terms = [&](Method method) {
    cfg.method = method;
    Graph g;
    return build_objective(g, m, batch, cfg).values;
  };
  const LossBundle agg = terms(Method::agg_mm);
  const LossBundle mt = terms(Method::mt_mml);
  const LossBundle un = terms(Method::unis_mmc);
  EXPECT_EQ(agg.total, agg.l_multi);
  EXPECT_EQ(agg.l_uni, 0.0);
  EXPECT_EQ(mt.total, mt.l_uni + mt.l_multi);
  EXPECT_EQ(mt.l_multi, agg.l_multi);
  EXPECT_NEAR(un.total, un.l_uni + un.l_multi + 0.1 * un.l_mmc, 1e-12);
  EXPECT_GE(un.l_mmc, 0.0);
}

TEST(Objective, AblatedMmcIsStillNonNegative) {
  TrainConfig cfg;
  cfg.use_semi = false;
  cfg.use_neg = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelState m = toy_model(seed);
    const auto batch = toy_batch(m.spec, 16, seed);
    Graph g;
    EXPECT_GE(build_objective(g, m, batch, cfg).values.l_mmc, 0.0);
  }
}

TEST(Trainer, ZeroLambdaFollowsMultiTaskTrajectory) {
  const Dataset data = generate(tiny_spec());
  TrainConfig a = tiny_config(Method::unis_mmc);
  a.lambda = 0.0;
  TrainConfig b = tiny_config(Method::mt_mml);
  ModelState ma = init_model(a.model.spec_for(data.spec), 3);
  ModelState mb = ma;
  Trainer ta(ma, a), tb(mb, b);
  for (std::size_t start = 0; start + 128 <= data.train.size(); start += 128) {
    std::vector<std::size_t> rows(128);
    std::iota(rows.begin(), rows.end(), start);
    const auto chunk = data.train.subset(rows);
    ta.step(chunk, 1e-3);
    tb.step(chunk, 1e-3);
    ASSERT_EQ(ma, mb) << "diverged at chunk starting " << start;
  }
}

TEST(Trainer, AccumulatedMicroBatchesMatchOneFullBatch) {
  const Dataset data = generate(tiny_spec());
  const auto chunk = first_rows(data.train, 128);
  for (auto method : {Method::mt_mml, Method::agg_mm}) {
    TrainConfig acc = tiny_config(method);
    acc.micro_batch_size = 32;
    acc.effective_batch_size = 128;
    TrainConfig full = acc;
    full.micro_batch_size = 128;
    ModelState m_acc = init_model(acc.model.spec_for(data.spec), 1);
    ModelState m_full = m_acc;
    Trainer t_acc(m_acc, acc), t_full(m_full, full);
    for (int step = 0; step < 3; ++step) {
      t_acc.step(chunk, 1e-3);
      t_full.step(chunk, 1e-3);
      EXPECT_LE(max_abs_diff(m_acc, m_full), 1e-12) << to_string(method) << " step " << step;
    }
  }
}

TEST(Trainer, AggregationOnlyLeavesUnimodalHeadsAtInit) {
  const Dataset data = generate(tiny_spec());
  const TrainConfig cfg = tiny_config(Method::agg_mm);
  ModelState model = init_model(cfg.model.spec_for(data.spec), 2);
  const ModelState init = model;
  TrainResult r = train(cfg, data, model);
  for (std::size_t m = 0; m < 2; ++m) {
    EXPECT_TRUE(same_values(model.unimodal_classifiers[m], init.unimodal_classifiers[m]));
    EXPECT_TRUE(same_values(r.best_model.unimodal_classifiers[m], init.unimodal_classifiers[m]));
  }
  EXPECT_FALSE(same_values(model.encoders[0], init.encoders[0]));
}

TEST(Trainer, AggregationSolvesNoiselessDataWithinFiveEpochs) {
  SynthSpec s = tiny_spec(8);
  s.noise_sigma = {0.0, 0.0};
  s.corruption_rate = {0.0, 0.0};
  const Dataset data = generate(s);
  TrainConfig cfg = tiny_config(Method::agg_mm);
  cfg.max_epochs = 5;
  ModelState model = init_model(cfg.model.spec_for(data.spec), 0);
  const TrainResult r = train(cfg, data, model);
  ASSERT_TRUE(r.metrics.test.has_value());
  EXPECT_EQ(r.metrics.test->acc_multi, 1.0);
}

TEST(Trainer, SameSeedGivesIdenticalMetrics) {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = tiny_config(Method::unis_mmc);
  cfg.seed = 4;
  auto run = [&] {
    ModelState model = init_model(cfg.model.spec_for(data.spec), cfg.seed);
    TrainResult r = train(cfg, data, model);
    return std::make_pair(format_metrics_csv(r.metrics), serialize_checkpoint(r.best_model));
  };
  EXPECT_EQ(run(), run());
}

TEST(Trainer, RecordsEveryEpochAndSelectsBestValidation) {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = tiny_config(Method::unis_mmc);
  cfg.max_epochs = 4;
  ModelState model = init_model(cfg.model.spec_for(data.spec), 0);
  const TrainResult r = train(cfg, data, model);
  ASSERT_EQ(r.metrics.epochs.size(), 4u);
  double best = -1.0;
  for (const auto& e : r.metrics.epochs) {
    const auto& c = e.valid.consistency;
    EXPECT_NEAR(c.both_correct + c.both_wrong + c.exclusive, 1.0, 1e-9);
    EXPECT_GT(e.train_l_mmc, 0.0);
    best = std::max(best, e.valid.acc_multi);
  }
  EXPECT_EQ(r.metrics.best().valid.acc_multi, best);
  for (std::size_t i = 0; i + 1 < r.metrics.best_epoch; ++i) EXPECT_LT(r.metrics.epochs[i].valid.acc_multi, best);
  ModelState best_copy = r.best_model;
  EXPECT_EQ(evaluate(best_copy, data.valid).summary.acc_multi, best);
}

TEST(Trainer, ModalityMismatchIsDimensionError) {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = tiny_config(Method::mt_mml);
  ModelSpec spec = cfg.model.spec_for(data.spec);
  spec.encoders.push_back(spec.encoders[0]);
  ModelState model = init_model(spec, 0);
  EXPECT_THROW(train(cfg, data, model), DimensionError);
}

TEST(Trainer, DivergenceKeepsPartialMetrics) {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = tiny_config(Method::mt_mml);
  ModelState model = init_model(cfg.model.spec_for(data.spec), 0);
  model.fusion_classifier.layers[0].weight.value(0, 0) = std::numeric_limits<double>::infinity();
  try {
    train(cfg, data, model);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(e.metrics.failure.find("epoch 1"), std::string::npos) << e.metrics.failure;
    EXPECT_TRUE(e.metrics.epochs.empty());
  }
}

TEST(Consistency, MatchesBruteForceRecount) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> cls(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial);
    std::vector<int> y(n), a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = cls(rng);
      a[i] = cls(rng);
      b[i] = cls(rng);
    }
    std::size_t both = 0, neither = 0, one = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int correct = (a[i] == y[i]) + (b[i] == y[i]);
      both += correct == 2;
      neither += correct == 0;
      one += correct == 1;
    }
    const Consistency c = consistency(y, {a, b});
    const double dn = static_cast<double>(n);
    EXPECT_DOUBLE_EQ(c.both_correct, static_cast<double>(both) / dn);
    EXPECT_DOUBLE_EQ(c.both_wrong, static_cast<double>(neither) / dn);
    EXPECT_DOUBLE_EQ(c.exclusive, static_cast<double>(one) / dn);
    EXPECT_NEAR(c.both_correct + c.both_wrong + c.exclusive, 1.0, 1e-9);
  }
}

TEST(Evaluate, AllCorrectModelHasBothCorrectOne) {
  // Identity layers route feature k of a one-hot input straight to logit k.
  ModelSpec s;
  s.encoders = {EncoderSpec{3, {3}, 3}, EncoderSpec{3, {3}, 3}};
  s.classifier_hidden = {3, 3};
  s.num_classes = 3;
  ModelState m = init_model(s, 0);
  const Tensor eye{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (auto* p : m.parameters()) {
    if (p->name.ends_with("bias")) {
      p->value.fill(0.0);
    } else if (p->value.rows() == 3) {
      p->value = eye;
    } else {
      p->value = Tensor{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    }
  }
  MultimodalBatch b;
  b.features = {Tensor{{1, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 0, 2}}, Tensor{{2, 0, 0}, {0, 0, 1}, {0, 3, 0}, {0, 0, 1}}};
  b.labels = {0, 2, 1, 2};
  const Evaluation ev = evaluate(m, b);
  EXPECT_EQ(ev.summary.acc_multi, 1.0);
  EXPECT_EQ(ev.summary.consistency.both_correct, 1.0);
  EXPECT_EQ(ev.summary.consistency.both_wrong, 0.0);
  EXPECT_TRUE(std::isnan(ev.summary.cos_semi));
  EXPECT_NEAR(ev.summary.cos_positive, (1.0 + 1.0 + 1.0 + 1.0) / 4.0, 1e-12);
}

TEST(Evaluate, ChunkingDoesNotChangeResults) {
  const Dataset data = generate(tiny_spec());
  ModelState m = init_model(tiny_config(Method::mt_mml).model.spec_for(data.spec), 6);
  const Evaluation whole = evaluate(m, data.valid, 1000);
  const Evaluation pieces = evaluate(m, data.valid, 7);
  EXPECT_EQ(whole.preds_multi, pieces.preds_multi);
  EXPECT_EQ(whole.preds_uni, pieces.preds_uni);
  EXPECT_EQ(whole.fused, pieces.fused);
  EXPECT_NEAR(whole.summary.loss_multi, pieces.summary.loss_multi, 1e-12);
  EXPECT_EQ(whole.summary.consistency.both_correct, pieces.summary.consistency.both_correct);
}

TEST(Embeddings, RowCountAndReload) {
  const Dataset data = generate(tiny_spec());
  ModelState m = init_model(tiny_config(Method::mt_mml).model.spec_for(data.spec), 6);
  const auto dir = scratch_dir("embeddings");
  export_embeddings(m, data.test, dir / "e.csv");
  const std::string text = io::read_file(dir / "e.csv");
  const auto lines = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  EXPECT_EQ(lines, 1 + data.test.size() * 3);
  const Embeddings back = read_embeddings_csv(dir / "e.csv");
  EXPECT_EQ(back, compute_embeddings(m, data.test));
  export_embeddings(m, data.test, dir / "again.csv");
  EXPECT_EQ(io::read_file(dir / "again.csv"), text);
  fs::remove_all(dir);
}

TEST(Embeddings, UnwritablePathNamesFile) {
  const Dataset data = generate(tiny_spec());
  ModelState m = init_model(tiny_config(Method::mt_mml).model.spec_for(data.spec), 6);
  const fs::path bad = "/nonexistent_dir_for_unismmc/e.csv";
  try {
    export_embeddings(m, data.test, bad);
    FAIL() << "expected Error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(bad.string()), std::string::npos) << e.what();
  }
}

TEST(MetricsFile, RoundTripsThroughReader) {
  const Dataset data = generate(tiny_spec());
  TrainConfig cfg = tiny_config(Method::unis_mmc);
  ModelState model = init_model(cfg.model.spec_for(data.spec), 0);
  const TrainResult r = train(cfg, data, model);
  const auto dir = scratch_dir("metrics");
  write_metrics_csv(r.metrics, dir / "metrics.csv");
  const MetricsTable t = read_metrics_csv(dir / "metrics.csv");
  EXPECT_EQ(t.header, metrics_header(2));
  ASSERT_EQ(t.rows.size(), cfg.max_epochs + 1);
  const auto fin = t.final_row();
  ASSERT_TRUE(fin.has_value());
  EXPECT_EQ(*fin, cfg.max_epochs);
  EXPECT_EQ(t.number(*fin, "acc_multi"), r.metrics.test->acc_multi);
  EXPECT_EQ(t.number(*fin, "both_correct"), r.metrics.test->consistency.both_correct);
  EXPECT_EQ(static_cast<std::size_t>(t.number(*fin, "epoch")), r.metrics.best_epoch);
  for (std::size_t e = 0; e < cfg.max_epochs; ++e) {
    EXPECT_EQ(t.number(e, "loss_multi"), r.metrics.epochs[e].valid.loss_multi);
    EXPECT_EQ(t.number(e, "lr"), r.metrics.epochs[e].lr);
  }
  fs::remove_all(dir);
}

TEST(MetricsFile, MissingAndRaggedFilesRejected) {
  const auto dir = scratch_dir("metrics_bad");
  EXPECT_THROW(read_metrics_csv(dir / "absent.csv"), Error);
  io::write_file_atomic(dir / "ragged.csv", "record,split,epoch\nepoch,valid\n");
  EXPECT_THROW(read_metrics_csv(dir / "ragged.csv"), FormatError);
  fs::remove_all(dir);
}
