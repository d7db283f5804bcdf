#include "nmt/model.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

namespace nmt {
namespace {

ModelConfig tiny_config(std::size_t vocab = 50) {
  ModelConfig c;
  c.emb_dim = 8;
  c.rnn_dim = 16;
  c.vocab_size = vocab;
  return c;
}

ParameterSet<float> zeros_like(const ParameterSet<float>& p) {
  ParameterSet<float> out;
  for (const auto& [name, t] : p) out.insert(name, Tensor<float>(t.shape()));
  return out;
}

// Random small-magnitude weights, including biases and gains, so every
// parameter carries a nonzero gradient.
ParameterSet<double> random_params(const ModelConfig& config, std::uint64_t seed) {
  ParameterSet<double> p = init_parameters(config, seed).cast<double>();
  CounterRng rng(seed + 1);
  for (auto& [name, t] : p) {
    const bool gain = name.find(".gain") != std::string::npos;
    for (double& v : t.values()) v = gain ? rng.uniform(0.5, 1.5) : v + rng.uniform(-0.3, 0.3);
  }
  return p;
}

TEST(ModelTest, InitIsDeterministicAndBounded) {
  ModelConfig c = tiny_config();
  auto a = init_parameters(c, 17);
  auto b = init_parameters(c, 17);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, init_parameters(c, 18));
  EXPECT_EQ(a.at("src_emb").shape(), (Shape{50, 8}));
  EXPECT_EQ(a.at("tgt_emb").shape(), (Shape{50, 8}));
  for (const ParameterSpec& spec : parameter_specs(c)) {
    const Tensor<float>& t = a.at(spec.name);
    ASSERT_EQ(t.shape(), spec.shape) << spec.name;
    if (spec.role == ParameterRole::kWeight) {
      const double bound = std::sqrt(6.0 / double(spec.shape[0] + spec.shape[1]));
      for (float v : t.values()) ASSERT_LE(std::abs(v), bound) << spec.name;
    } else {
      const float expected = spec.role == ParameterRole::kGain ? 1.0f : 0.0f;
      for (float v : t.values()) ASSERT_EQ(v, expected) << spec.name;
    }
  }
}

TEST(ModelTest, RejectsInvalidConfig) {
  ModelConfig c = tiny_config();
  c.rnn_dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.layers = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config(0);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelTest, ZeroWeightsGiveZeroAnnotations) {
  ModelConfig c = tiny_config();
  auto zero = zeros_like(init_parameters(c, 1));
  const TokenIds src{5, 6, 7};
  Tensor<float> ann = encode(zero, c, src);
  EXPECT_EQ(ann.shape(), (Shape{3, 32}));
  for (float v : ann.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(encode(zero, c, TokenIds{}), ShapeError);
}

TEST(ModelTest, SingleTokenEncodesBothDirectionsFromSameToken) {
  ModelConfig c = tiny_config();
  c.layer_norm = false;
  auto p = init_parameters(c, 3);
  // Make the backward cell a copy of the forward cell: both halves must agree.
  for (const char* name : {"W_z", "W_r", "W_c", "U_z", "U_r", "U_c", "b_z", "b_r", "b_c"}) {
    p.at(std::string("enc_bwd.") + name) = p.at(std::string("enc_fwd.") + name);
  }
  Tensor<float> ann = encode(p, c, TokenIds{9});
  ASSERT_EQ(ann.shape(), (Shape{1, 32}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(ann[i], ann[16 + i]);
}

TEST(ModelTest, PaperSizedAnnotationShape) {
  ModelConfig c;
  c.vocab_size = 12;
  auto p = init_parameters(c, 5);
  Tensor<float> ann = encode(p, c, TokenIds{4, 5, 6, 3});
  EXPECT_EQ(ann.shape(), (Shape{4, 2048}));
}

TEST(ModelTest, AttentionWeights) {
  ModelConfig c = tiny_config();
  auto p = init_parameters(c, 8);
  CounterRng rng(4);
  Tensor<float> state({1, 16});
  for (float& v : state.values()) v = float(rng.uniform(-1, 1));

  Tensor<float> one({1, 32});
  for (float& v : one.values()) v = float(rng.uniform(-1, 1));
  EXPECT_EQ(attend(p, c, state, one).weights[0], 1.0f);

  Tensor<float> many({7, 32});
  for (float& v : many.values()) v = float(rng.uniform(-1, 1));
  auto att = attend(p, c, state, many);
  EXPECT_NEAR(std::accumulate(att.weights.values().begin(), att.weights.values().end(), 0.0), 1.0, 1e-6);

  p.at("att.v").fill(0.0f);
  att = attend(p, c, state, many);
  for (float w : att.weights.values()) EXPECT_FLOAT_EQ(w, 1.0f / 7.0f);
}

TEST(ModelTest, DecodeStepDistribution) {
  ModelConfig c = tiny_config();
  auto p = init_parameters(c, 21);
  Tensor<float> ann = encode(p, c, TokenIds{4, 8, 15, 16});
  Tensor<float> s0 = initial_state(p, c, ann);
  auto step = decode_step(p, c, s0, kBosId, ann);
  double total = 0;
  for (float lp : step.log_probs.values()) {
    EXPECT_LE(lp, 0.0f);
    total += std::exp(double(lp));
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
  auto again = decode_step(p, c, s0, kBosId, ann);
  EXPECT_EQ(again.log_probs, step.log_probs);
  EXPECT_EQ(again.state, step.state);

  auto zero = zeros_like(p);
  auto uniform = decode_step(zero, c, s0, 7, ann);
  for (float lp : uniform.log_probs.values()) EXPECT_FLOAT_EQ(lp, float(-std::log(50.0)));
}

TEST(ModelTest, SequenceLogprobZeroModelIsUniform) {
  ModelConfig c = tiny_config();
  auto zero = zeros_like(init_parameters(c, 1));
  auto lp = sequence_logprob(zero, c, TokenIds{4, 5}, TokenIds{9, 10, kEosId});
  ASSERT_EQ(lp.size(), 3u);
  for (float v : lp) EXPECT_FLOAT_EQ(v, float(-std::log(50.0)));
}

// Chain rule via per-step decoding, and normalization over every sequence of
// a fixed length, on a vocabulary of two ordinary tokens plus the specials.
TEST(ModelTest, SequenceLogprobMatchesExhaustiveChainRule) {
  ModelConfig c = tiny_config(6);
  auto p = random_params(c, 31);
  const TokenIds src{4, 5, 4};
  const TokenId tokens[] = {4, 5};
  Tensor<double> ann = encode(p, c, src);
  double mass = 0.0;
  for (TokenId a : tokens) {
    for (TokenId b : tokens) {
      for (TokenId d : tokens) {
        const TokenIds tgt{a, b, d};
        auto lp = sequence_logprob(p, c, src, tgt);
        Tensor<double> state = initial_state(p, c, ann);
        TokenId prev = kBosId;
        double chain = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          auto step = decode_step(p, c, state, prev, ann);
          EXPECT_NEAR(lp[j], step.log_probs[tgt[j]], 1e-12);
          chain += step.log_probs[tgt[j]];
          state = step.state;
          prev = tgt[j];
        }
        EXPECT_NEAR(std::accumulate(lp.begin(), lp.end(), 0.0), chain, 1e-12);
      }
    }
  }
  // Every length-2 continuation over the full vocabulary sums to one.
  for (TokenId a = 0; a < 6; ++a)
    for (TokenId b = 0; b < 6; ++b) {
      auto lp = sequence_logprob(p, c, src, TokenIds{a, b});
      mass += std::exp(lp[0] + lp[1]);
    }
  EXPECT_NEAR(mass, 1.0, 1e-12);
}

TEST(ModelTest, RelabelingVocabularyLeavesScoresUnchanged) {
  ModelConfig c = tiny_config(12);
  auto p = random_params(c, 41);
  // Permute ordinary ids 4..11; specials stay put.
  std::vector<TokenId> perm{0, 1, 2, 3, 9, 4, 11, 6, 5, 10, 7, 8};
  ParameterSet<double> q = p;
  for (TokenId old_id = 0; old_id < 12; ++old_id) {
    const TokenId nid = perm[old_id];
    for (const char* emb : {"src_emb", "tgt_emb"}) {
      for (std::size_t k = 0; k < 8; ++k) q.at(emb)(nid, k) = p.at(emb)(old_id, k);
    }
    for (std::size_t k = 0; k < 8; ++k) q.at("logit.W")(k, nid) = p.at("logit.W")(k, old_id);
    q.at("logit.b")(0, nid) = p.at("logit.b")(0, old_id);
  }
  const TokenIds src{4, 7, 10, 5}, tgt{6, 11, 8, kEosId};
  TokenIds src2, tgt2;
  for (TokenId t : src) src2.push_back(perm[t]);
  for (TokenId t : tgt) tgt2.push_back(perm[t]);
  auto a = sequence_logprob(p, c, src, tgt);
  auto b = sequence_logprob(q, c, src2, tgt2);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), std::accumulate(b.begin(), b.end(), 0.0), 1e-12);
}

// Mean cross-entropy over a two-sentence batch of unequal lengths, with
// dropout active so masks and word dropout are covered too.
template <typename T>
struct LossGraph {
  Graph<T> graph;
  Var loss;
  LossGraph(ParameterSet<T>& params, const ModelConfig& config, std::uint64_t seed) {
    CounterRng rng(seed);
    Seq2Seq<T> model(graph, params, config, Mode::kTrain, &rng);
    std::size_t tokens = 0;
    Var total = model.loss({{4, 17, 23, 9, 30}, {5, 41, 12}}, {{33, 8, 21, kEosId}, {44, 19, 7, 26, 11, kEosId}}, &tokens);
    loss = graph.scale(total, T(1) / T(tokens));
  }
};

TEST(ModelTest, FullModelGradientsMatchFiniteDifferences) {
  ModelConfig c = tiny_config();
  c.rnn_dropout = 0.2;
  c.word_dropout_src = 0.1;
  c.word_dropout_tgt = 0.1;
  ParameterSet<double> p64 = random_params(c, 51);

  LossGraph<double> exact(p64, c, 99);
  auto numeric = numeric_gradients(exact.graph, exact.loss, 1e-4);
  auto analytic64 = gradients(exact.graph, exact.loss);

  ParameterSet<float> p32 = p64.cast<float>();
  LossGraph<float> single(p32, c, 99);
  auto analytic32 = gradients(single.graph, single.loss);

  ASSERT_EQ(numeric.size(), parameter_specs(c).size());
  for (const auto& [name, n] : numeric) {
    const auto& a64 = analytic64.at(name);
    EXPECT_LT(max_relative_error(a64.values(), n.values(), 1e-6), 1e-5) << name;
    Tensor<double> a32 = analytic32.at(name).cast<double>();
    EXPECT_LT(max_relative_error(a32.values(), n.values(), 1e-5), 1e-3) << name;
  }
}

}  // namespace
}  // namespace nmt
