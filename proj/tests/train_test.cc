#include "nmt/train.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

#include "nmt/error.h"

namespace nmt {
namespace {

ModelConfig tiny_config(std::size_t vocab = 30) {
  ModelConfig c;
  c.emb_dim = 8;
  c.rnn_dim = 16;
  c.vocab_size = vocab;
  return c;
}

ParameterSet<double> scalar_param(double value) {
  ParameterSet<double> p;
  p.insert("theta", Tensor<double>({1, 1}, value));
  return p;
}

std::map<std::string, Tensor<double>> scalar_grad(double g) { return {{"theta", Tensor<double>({1, 1}, g)}}; }

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamConfig config;
  config.learning_rate = 0.01;
  config.clip_norm = 0;
  for (double g : {0.3, -2.5, 1e-3}) {
    auto p = scalar_param(1.0);
    BasicAdamState<double> state;
    adam_step(p, scalar_grad(g), state, config);
    EXPECT_EQ(state.t, 1u);
    EXPECT_NEAR(p.at("theta")[0], 1.0 - 0.01 * (g > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  auto p = scalar_param(0.75);
  BasicAdamState<double> state;
  for (int i = 0; i < 5; ++i) adam_step(p, scalar_grad(0.0), state, AdamConfig{});
  EXPECT_EQ(p.at("theta")[0], 0.75);
}

TEST(Adam, MatchesReferenceTraceOnSquare) {
  // Reference Adam written out directly for f(theta) = theta^2.
  const double alpha = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double theta = 1.5, m = 0, v = 0;
  std::vector<double> expected;
  for (int t = 1; t <= 10; ++t) {
    const double g = 2 * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= alpha * mhat / (std::sqrt(vhat) + eps);
    expected.push_back(theta);
  }
  AdamConfig config;
  config.learning_rate = alpha;
  config.clip_norm = 0;
  auto p = scalar_param(1.5);
  BasicAdamState<double> state;
  for (int t = 0; t < 10; ++t) {
    adam_step(p, scalar_grad(2 * p.at("theta")[0]), state, config);
    EXPECT_NEAR(p.at("theta")[0], expected[static_cast<std::size_t>(t)], 1e-10) << "step " << t + 1;
  }
}

TEST(Adam, ClipsGlobalNorm) {
  AdamConfig config;
  config.clip_norm = 1.0;
  ParameterSet<double> p;
  p.insert("a", Tensor<double>({1, 2}, 0.0));
  BasicAdamState<double> state;
  const double norm = adam_step(p, {{"a", Tensor<double>({1, 2}, std::vector<double>{3.0, 4.0})}}, state, config);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(state.m.at("a")[0], 0.1 * 3.0 / 5.0, 1e-15);
  EXPECT_NEAR(state.m.at("a")[1], 0.1 * 4.0 / 5.0, 1e-15);
}

TEST(Adam, NonFiniteGradientRefused) {
  auto p = scalar_param(1.0);
  BasicAdamState<double> state;
  EXPECT_THROW(adam_step(p, scalar_grad(std::nan("")), state, AdamConfig{}), NonFiniteError);
  EXPECT_THROW(adam_step(p, scalar_grad(INFINITY), state, AdamConfig{}), NonFiniteError);
  EXPECT_EQ(p.at("theta")[0], 1.0);
  EXPECT_EQ(state.t, 0u);
}

TEST(Adam, ParametersStayFiniteOnRandomGradients) {
  std::mt19937 gen(1);
  std::normal_distribution<double> normal(0, 1e3);
  ParameterSet<double> p;
  p.insert("w", Tensor<double>({4, 4}, 0.1));
  BasicAdamState<double> state;
  for (int i = 0; i < 200; ++i) {
    Tensor<double> g({4, 4});
    for (double& x : g.values()) x = normal(gen);
    adam_step(p, {{"w", g}}, state, AdamConfig{});
    ASSERT_TRUE(p.all_finite());
  }
}

TEST(MakeBatches, BudgetExample) {
  BatchPlan plan = make_batches({5, 5, 9}, 12, 3);
  std::multiset<std::vector<std::size_t>> expected{{0, 1}, {2}};
  auto got = plan.batches;
  for (auto& b : got) std::sort(b.begin(), b.end());
  EXPECT_EQ(std::multiset<std::vector<std::size_t>>(got.begin(), got.end()), expected);
  EXPECT_TRUE(plan.oversize.empty());
}

TEST(MakeBatches, EveryExampleOnceAndWithinBudget) {
  std::mt19937 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> lengths;
    const std::size_t n = gen() % 200;
    for (std::size_t i = 0; i < n; ++i) lengths.push_back(1 + gen() % 40);
    const std::size_t budget = 20 + gen() % 200;
    BatchPlan plan = make_batches(lengths, budget, trial, 1 + gen() % 64);
    std::vector<std::size_t> seen;
    for (const auto& b : plan.batches) {
      ASSERT_FALSE(b.empty());
      std::size_t longest = 0;
      for (std::size_t i : b) longest = std::max(longest, lengths[i]);
      if (b.size() > 1) {
        EXPECT_LE(longest * b.size(), budget);
      }
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::sort(seen.begin(), seen.end());
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    EXPECT_EQ(seen, all);
  }
}

TEST(MakeBatches, DeterministicPerSeed) {
  std::vector<std::size_t> lengths{3, 8, 2, 9, 4, 4, 7, 1, 6, 5};
  EXPECT_EQ(make_batches(lengths, 16, 7).batches, make_batches(lengths, 16, 7).batches);
}

TEST(MakeBatches, OversizeExampleAlone) {
  BatchPlan plan = make_batches({3, 50, 3}, 10, 1);
  ASSERT_EQ(plan.oversize, (std::vector<std::size_t>{1}));
  bool alone = false;
  for (const auto& b : plan.batches) alone = alone || b == std::vector<std::size_t>{1};
  EXPECT_TRUE(alone);
}

TEST(EarlyStop, FixtureStopsAfterFiveFailures) {
  EarlyStopState s;
  const std::vector<double> scores{10, 11, 10.5, 10.5, 10.5, 10.5, 10.5};
  std::vector<bool> stops;
  for (double x : scores) stops.push_back(update_early_stop(s, x));
  EXPECT_EQ(stops, (std::vector<bool>{false, false, false, false, false, false, true}));
  EXPECT_EQ(s.best_score, 11);
  EXPECT_EQ(s.failures, 5u);
}

TEST(EarlyStop, IncreasingNeverStopsAndTiesFail) {
  EarlyStopState s;
  for (int i = 0; i < 100; ++i) EXPECT_FALSE(update_early_stop(s, i));
  EXPECT_EQ(s.failures, 0u);
  update_early_stop(s, 99);
  EXPECT_EQ(s.failures, 1u);
}

TEST(Smoothing, UnitDecayCopiesAndSmallDecayAverages) {
  ParameterSet<float> shadow, live;
  shadow.insert("w", Tensor<float>({1, 2}, 0.0f));
  live.insert("w", Tensor<float>({1, 2}, 1.0f));
  smooth_update(shadow, live, 1.0);
  EXPECT_EQ(shadow, live);
  shadow.at("w").fill(0.0f);
  smooth_update(shadow, live, 0.25);
  EXPECT_FLOAT_EQ(shadow.at("w")[0], 0.25f);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto dir = temp_dir("nmt_ckpt_test");
  auto params = init_parameters(tiny_config(), 5);
  save_model(params, tiny_config(), dir / "a.ckpt");
  LoadedModel loaded = load_model(dir / "a.ckpt");
  EXPECT_EQ(loaded.params, params);
  EXPECT_EQ(loaded.config, tiny_config());
  save_model(loaded.params, loaded.config, dir / "b.ckpt");
  EXPECT_EQ(bytes(dir / "a.ckpt"), bytes(dir / "b.ckpt"));
  EXPECT_EQ(bytes(dir / "a.ckpt").substr(0, 8), "NMTCKPT1");

  std::ofstream(dir / "bad.ckpt") << "NOTACKPT";
  EXPECT_THROW(load_tensors(dir / "bad.ckpt"), ParseError);
  auto truncated = bytes(dir / "a.ckpt");
  std::ofstream(dir / "short.ckpt", std::ios::binary) << truncated.substr(0, truncated.size() - 3);
  EXPECT_THROW(load_tensors(dir / "short.ckpt"), ParseError);
  EXPECT_THROW(load_tensors(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, LittleEndianLayout) {
  auto dir = temp_dir("nmt_ckpt_layout");
  save_tensors({{"x", Tensor<float>({1, 1}, 1.0f)}}, dir / "x.ckpt");
  const std::string b = bytes(dir / "x.ckpt");
  ASSERT_EQ(b.size(), 8u + 8 + 1 + 8 + 16 + 4);
  EXPECT_EQ(b[8], 1);       // name length
  EXPECT_EQ(b[16], 'x');
  EXPECT_EQ(b[17], 2);      // rank
  EXPECT_EQ(static_cast<unsigned char>(b[b.size() - 1]), 0x3F);  // 1.0f = 0x3F800000
  std::filesystem::remove_all(dir);
}

std::vector<TrainingPair> copy_task(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  CounterRng rng(seed);
  std::vector<TrainingPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    TokenIds s{4};
    TokenIds t;
    const std::size_t len = 1 + rng.below(4);
    for (std::size_t j = 0; j < len; ++j) {
      const auto id = static_cast<TokenId>(5 + rng.below(vocab - 5));
      s.push_back(id);
      t.push_back(id);
    }
    t.push_back(kEosId);
    out.push_back({s, t});
  }
  return out;
}

TrainConfig quick_config() {
  TrainConfig c;
  c.token_budget = 40;
  c.max_steps = 30;
  c.validation_every = 10;
  c.adam.learning_rate = 0.01;
  c.smoothing = 0.5;
  c.seed = 3;
  return c;
}

TEST(TrainLoop, ValidatesOnScheduleAndIsDeterministic) {
  auto data = copy_task(24, 30, 1);
  std::vector<std::size_t> calls;
  std::size_t count = 0;
  Validator validator = [&](const ParameterSet<float>&) {
    calls.push_back(++count);
    return static_cast<double>(count);
  };
  TrainResult a = train_loop(tiny_config(), quick_config(), data, validator);
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(a.log[0].step, 10u);
  EXPECT_EQ(a.log[1].step, 20u);
  EXPECT_EQ(a.log[2].step, 30u);
  EXPECT_EQ(a.steps, 30u);
  TrainResult b = train_loop(tiny_config(), quick_config(), data, validator);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.log[2].loss, b.log[2].loss);
}

TEST(TrainLoop, EarlyStopKeepsBestSnapshot) {
  auto data = copy_task(16, 30, 2);
  TrainConfig config = quick_config();
  config.max_steps = 1000;
  config.validation_every = 2;
  std::vector<ParameterSet<float>> seen;
  Validator validator = [&](const ParameterSet<float>& p) {
    seen.push_back(p);
    return seen.size() == 2 ? 1.0 : 0.0;
  };
  TrainResult r = train_loop(tiny_config(), config, data, validator);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.steps, 14u);
  EXPECT_EQ(r.best, seen[1]);
  EXPECT_EQ(r.best_score, 1.0);
}

TEST(TrainLoop, ResumeMatchesUninterruptedRun) {
  auto data = copy_task(24, 30, 3);
  auto dir_a = temp_dir("nmt_resume_a");
  auto dir_b = temp_dir("nmt_resume_b");
  TrainConfig config = quick_config();
  config.output_dir = dir_a;
  TrainResult straight = train_loop(tiny_config(), config, data);

  config.output_dir = dir_b;
  config.max_steps = 20;
  train_loop(tiny_config(), config, data);
  config.max_steps = 30;
  TrainResult resumed = train_loop(tiny_config(), config, data);
  EXPECT_EQ(resumed.steps, 30u);
  EXPECT_EQ(resumed.best, straight.best);
  EXPECT_EQ(bytes(dir_a / "last.ckpt"), bytes(dir_b / "last.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir_b / "train.log.tsv"));
  EXPECT_TRUE(std::filesystem::exists(dir_b / "best.ckpt.json"));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST(TrainLoop, LearnsCopyTask) {
  auto data = copy_task(32, 20, 4);
  ModelConfig model = tiny_config(20);
  model.rnn_dropout = model.word_dropout_src = model.word_dropout_tgt = 0;
  TrainConfig config = quick_config();
  config.max_steps = 300;
  config.validation_every = 100;
  config.smoothing = 1.0;
  const double before = mean_cross_entropy(init_parameters(model, config.seed), model, data);
  TrainResult r = train_loop(model, config, data);
  const double after = mean_cross_entropy(r.best, model, data);
  EXPECT_LT(after, 0.5 * before);
}

TEST(TrainLoop, RejectsBadInput) {
  EXPECT_THROW(train_loop(tiny_config(), quick_config(), {}), DomainError);
  EXPECT_THROW(train_loop(tiny_config(), quick_config(), {{{4, 5}, {5}}}), DomainError);
  EXPECT_THROW(train_loop(tiny_config(), quick_config(), {{{4, 99}, {5, kEosId}}}), DomainError);
}

}  // namespace
}  // namespace nmt
