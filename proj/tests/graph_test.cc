#include "nmt/graph.h"

#include <gtest/gtest.h>

#include <cmath>

namespace nmt {
namespace {

Tensor<double> random_tensor(Shape shape, CounterRng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

TEST(GraphTest, SoftmaxOfZerosIsUniform) {
  Graph<float> g(false);
  Var x = g.input("x", Tensor<float>({1, 4}));
  Var y = g.softmax(x);
  for (float v : g.value(y).values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(GraphTest, LayerNormOfConstantIsZero) {
  Graph<float> g(false);
  Var x = g.input("x", Tensor<float>({2, 5}, 3.5f));
  Tensor<float> gain({1, 5}, 1.0f), bias({1, 5}, 0.0f);
  Var y = g.layer_norm(x, g.parameter("g", gain), g.parameter("b", bias));
  for (float v : g.value(y).values()) EXPECT_EQ(v, 0.0f);
}

TEST(GraphTest, IdentityMatmulIsExact) {
  Graph<float> g(false);
  Tensor<float> eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0f;
  auto a = Tensor<float>::matrix(3, 2, {1.5f, -2.25f, 3.0f, 1e-7f, -4.0f, 1e9f});
  Var y = g.matmul(g.input("I", eye), g.input("A", a));
  EXPECT_EQ(g.value(y), a);
}

TEST(GraphTest, SquareDerivative) {
  Graph<double> g;
  Tensor<double> x = Tensor<double>::scalar(3.0);
  Var xv = g.parameter("x", x);
  Var loss = g.sum(g.multiply(xv, xv));
  auto grads = gradients(g, loss);
  EXPECT_DOUBLE_EQ(grads.at("x")[0], 6.0);
}

TEST(GraphTest, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  CounterRng rng(7);
  Tensor<double> logits = random_tensor({3, 6}, rng, -3, 3);
  std::vector<std::size_t> targets{0, 5, 2};
  Graph<double> g;
  Var l = g.parameter("logits", logits);
  Var loss = g.sum(g.cross_entropy_with_logits(l, targets));
  auto grads = gradients(g, loss);
  Graph<double> ref(false);
  const auto& probs = ref.value(ref.softmax(ref.input("x", logits)));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      const double expected = probs(r, c) - (c == targets[r] ? 1.0 : 0.0);
      EXPECT_NEAR(grads.at("logits")(r, c), expected, 1e-14);
    }
  }
}

TEST(GraphTest, NonScalarLossIsRejected) {
  Graph<double> g;
  Tensor<double> w({2, 2}, 1.0);
  Var v = g.parameter("w", w);
  EXPECT_THROW(g.backward(g.tanh(v)), ShapeError);
}

TEST(GraphTest, ShapeMismatchNamesTheNode) {
  Graph<float> g(false);
  Tensor<float> w({3, 4});
  Var a = g.input("a", Tensor<float>({2, 5}));
  Var b = g.parameter("W_enc", w);
  try {
    g.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("W_enc"), std::string::npos) << e.what();
  }
  EXPECT_THROW(g.set_input("a", Tensor<float>({5, 2})), ShapeError);
}

TEST(GraphTest, EvaluateReplaysWithNewInputs) {
  Graph<double> g(false);
  Var x = g.input("x", Tensor<double>({1, 2}));
  Tensor<double> w = Tensor<double>::matrix(2, 1, {2.0, -1.0});
  Var y = g.matmul(x, g.parameter("w", w));
  g.set_name(y, "y");
  auto out = evaluate(g, {{"x", Tensor<double>::matrix(1, 2, {3.0, 4.0})}});
  EXPECT_DOUBLE_EQ(out.at("y")[0], 2.0);
  EXPECT_THROW(evaluate(g, {{"x", Tensor<double>({2, 2})}}), ShapeError);
}

TEST(GraphTest, SoftmaxRowsSumToOne) {
  CounterRng rng(11);
  Graph<float> g(false);
  Tensor<float> x({8, 33});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform(-30, 30));
  const auto& y = g.value(g.softmax(g.input("x", x)));
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double total = 0;
    for (float v : y.row(r)) total += v;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(GraphTest, InvertedDropoutPreservesExpectation) {
  CounterRng rng(2024);
  const std::size_t masks = 20000;
  Tensor<double> total({1, 4});
  for (std::size_t i = 0; i < masks; ++i) {
    Tensor<double> m = make_dropout_mask<double>({1, 4}, 0.2, rng);
    for (std::size_t c = 0; c < 4; ++c) total[c] += m[c];
  }
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(total[c] / masks, 1.0, 0.02);

  Tensor<double> none = make_dropout_mask<double>({3, 3}, 0.0, rng);
  for (double v : none.values()) EXPECT_EQ(v, 1.0);
  EXPECT_THROW(make_dropout_mask<double>({1, 1}, 1.0, rng), ConfigError);
}

TEST(GraphTest, LinearGraphGradientAtMachinePrecision) {
  CounterRng rng(3);
  Tensor<double> w = random_tensor({4, 3}, rng);
  Tensor<double> b = random_tensor({1, 3}, rng);
  Graph<double> g;
  Var x = g.input("x", random_tensor({5, 4}, rng));
  Var loss = g.sum(g.scale(g.add(g.matmul(x, g.parameter("w", w)), g.parameter("b", b)), 0.5));
  EXPECT_LT(finite_difference_check(g, loss, 1e-4).max_relative_error, 1e-10);
}

// Three layers touching every primitive.
struct ThreeLayer {
  Tensor<double> w1, b1, gain, bias, w2, w3, emb;
  explicit ThreeLayer(CounterRng& rng)
      : w1(random_tensor({4, 6}, rng)),
        b1(random_tensor({1, 6}, rng)),
        gain(random_tensor({1, 6}, rng, 0.5, 1.5)),
        bias(random_tensor({1, 6}, rng)),
        w2(random_tensor({6, 6}, rng)),
        w3(random_tensor({3, 5}, rng)),
        emb(random_tensor({7, 4}, rng)) {}

  Var build(Graph<double>& g, CounterRng& rng) {
    Var e = g.parameter("emb", emb);
    const std::vector<TokenId> ids{1, 3, 3, 6};
    Var x = g.embedding_lookup(e, ids);  // 4x4
    Var h = g.layer_norm(g.add(g.matmul(x, g.parameter("w1", w1)), g.parameter("b1", b1)), g.parameter("gain", gain),
                         g.parameter("bias", bias));
    h = g.dropout(g.tanh(h), make_dropout_mask<double>({4, 6}, 0.3, rng));
    Var h2 = g.sigmoid(g.matmul(h, g.parameter("w2", w2)));
    Var gate = g.multiply(h2, g.slice(h, Axis::kCols, 0, 1));  // column broadcast
    Var left = g.slice(gate, Axis::kCols, 0, 3);
    Var shifted = g.sub(left, g.slice(g.slice(h, Axis::kRows, 1, 2), Axis::kCols, 0, 3));  // row broadcast
    Var joined = g.concat({shifted, g.slice(h, Axis::kCols, 2, 5)}, Axis::kRows);  // 8x3
    Var att = g.softmax(g.reshape(g.matmul(joined, g.parameter("w3", w3)), {4, 10}));
    std::vector<std::size_t> tiled;
    for (std::size_t i = 0; i < 40; ++i) tiled.push_back((i * 3) % 8);
    Var ctx = g.batch_matmul(att, g.gather_rows(joined, tiled), 4);  // (4x10) blocks against (40x3)
    Var logits = g.concat({ctx, g.slice(h2, Axis::kCols, 0, 2)}, Axis::kCols);  // 4x5
    Var ce = g.cross_entropy_with_logits(logits, {0, 4, 2, 1});
    Var lsm = g.log_softmax(logits);
    return g.add(g.sum(ce), g.scale(g.sum(g.multiply(lsm, lsm)), 0.01));
  }
};

TEST(GraphTest, RandomThreeLayerGraphMatchesFiniteDifferences) {
  CounterRng rng(99);
  ThreeLayer net(rng);
  Graph<double> g;
  CounterRng mask_rng(5);
  Var loss = net.build(g, mask_rng);
  GradientCheck check = finite_difference_check(g, loss, 1e-5);
  EXPECT_LT(check.max_relative_error, 1e-5) << check.worst_parameter;
  EXPECT_EQ(check.per_parameter.size(), 7u);
}

TEST(GraphTest, CentralDifferenceErrorIsSecondOrder) {
  CounterRng rng(1234);
  Tensor<double> w = random_tensor({3, 3}, rng);
  Graph<double> g;
  Var x = g.input("x", random_tensor({2, 3}, rng));
  Var loss = g.sum(g.tanh(g.matmul(g.tanh(g.matmul(x, g.parameter("w", w))), g.parameter("w", w))));
  auto analytic = gradients(g, loss).at("w");
  auto err = [&](double h) {
    auto numeric = numeric_gradients(g, loss, h).at("w");
    return max_relative_error(analytic.values(), numeric.values(), 1e-12);
  };
  const double coarse = err(1e-2), fine = err(5e-3);
  EXPECT_GT(coarse / fine, 2.0);
}

TEST(GraphTest, BroadcastRepeatsRowsInBlocks) {
  Graph<double> g(false);
  Var a = g.input("a", Tensor<double>({4, 2}));
  Var b = g.input("b", Tensor<double>::matrix(2, 2, {1, 2, 3, 4}));
  const auto& y = g.value(g.add(a, b));
  EXPECT_EQ(std::vector<double>(y.values().begin(), y.values().end()), (std::vector<double>{1, 2, 1, 2, 3, 4, 3, 4}));
  EXPECT_THROW(g.add(a, g.input("c", Tensor<double>({3, 2}))), ShapeError);
}

}  // namespace
}  // namespace nmt
