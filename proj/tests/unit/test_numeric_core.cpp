#include "support.hpp"

#include "xai/core/graph.hpp"
#include "xai/error.hpp"

#include <gtest/gtest.h>

using namespace xai;
using namespace xai::testing;

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor({2, 3}, Vector::Zero(5)), ShapeError);
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_FALSE(t.has_grad());
  t.zero_grad();
  EXPECT_EQ(t.grad().size(), t.size());
}

TEST(Forward, IdentityGraphReturnsInput) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({4, 4, 2}, rng);
  Graph g;
  Trace t = forward(g, x);
  EXPECT_EQ(t.output(), x);
}

TEST(Forward, SingleDenseIsLinear) {
  Graph g;
  g.add("fc", Dense{Tensor({1, 1}, Vector::Constant(1, 2.0)), Tensor({1})});
  Tensor x({1}, Vector::Constant(1, 3.0));
  EXPECT_DOUBLE_EQ(forward(g, x).output()[0], 6.0);
}

TEST(Forward, MatchesBruteForceArithmetic) {
  for (std::uint64_t seed : {3u, 11u, 29u}) {
    Graph g = random_cnn(seed);
    std::mt19937_64 rng(seed + 100);
    Tensor x = random_tensor({10, 9, 3}, rng, 0.0, 1.0);
    Tensor got = forward(g, x).output();
    Tensor want = naive_forward(g, x);
    ASSERT_EQ(got.shape(), want.shape());
    for (Index i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Forward, ShapeMismatchNamesLayer) {
  Graph g = random_cnn(5, 3);
  std::mt19937_64 rng(1);
  Tensor wrong = random_tensor({8, 8, 2}, rng);
  try {
    forward(g, wrong);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv1"), std::string::npos);
  }
}

TEST(GradWrt, LinearModelGradientIsWeight) {
  std::mt19937_64 rng(2);
  Tensor w = random_tensor({2, 12}, rng);
  Graph g;
  g.add("fc", Dense{w, Tensor({2})});
  Tensor x = random_tensor({2, 2, 3}, rng);
  for (Index cls = 0; cls < 2; ++cls) {
    Tensor grad = grad_wrt(g, x, cls, 0);
    ASSERT_EQ(grad.shape(), x.shape());
    for (Index i = 0; i < 12; ++i) EXPECT_EQ(grad[i], w[cls * 12 + i]);
  }
}

TEST(GradWrt, MatchesFiniteDifferencesOnInputAndFeatureMaps) {
  for (std::uint64_t seed : {7u, 8u, 9u, 10u}) {
    Graph g = random_cnn(seed);
    std::mt19937_64 rng(seed * 31);
    Tensor x = random_tensor({9, 10, 3}, rng, 0.0, 1.0);
    for (Index cls = 0; cls < 2; ++cls) {
      Tensor auto_grad = grad_wrt(g, x, cls, 0);
      Tensor fd = finite_difference([&](const Tensor& p) { return forward(g, p).output()[cls]; }, x);
      EXPECT_LT(max_relative_error(auto_grad, fd), 1e-6) << "seed " << seed;
    }
    // Gradient w.r.t. an intermediate feature map: perturb the feature map and
    // run the tail of the graph.
    const Index feat = g.id_of("relu2");
    Trace trace = forward(g, x);
    Tensor a = trace.value(feat);
    Graph tail;
    for (std::size_t i = static_cast<std::size_t>(feat); i < g.size(); ++i) tail.add(g.node(i).name, g.node(i).layer);
    Tensor auto_grad = grad_wrt(g, trace, 1, feat);
    Tensor fd = finite_difference([&](const Tensor& p) { return forward(tail, p).output()[1]; }, a);
    EXPECT_LT(max_relative_error(auto_grad, fd), 1e-6);
  }
}

TEST(GradWrt, DeadReluBlocksGradient) {
  Graph g;
  Tensor w1({1, 1}, Vector::Constant(1, 1.0));
  Tensor b1({1}, Vector::Constant(1, -5.0));
  g.add("fc1", Dense{w1, b1}).add("relu", Relu{}).add("fc2", Dense{Tensor({1, 1}, Vector::Ones(1)), Tensor({1})});
  Tensor x({1}, Vector::Constant(1, 1.0));
  EXPECT_EQ(grad_wrt(g, x, 0, 0)[0], 0.0);
}

TEST(GradWrt, ErrorsOnBadTargetAndId) {
  Graph g = random_cnn(1);
  std::mt19937_64 rng(0);
  Tensor x = random_tensor({8, 8, 3}, rng);
  Trace t = forward(g, x);
  EXPECT_THROW(grad_wrt(g, t, 2, 0), DataError);
  EXPECT_THROW(grad_wrt(g, t, 0, 99), NotFoundError);
  EXPECT_THROW(g.id_of("nope"), NotFoundError);
}

TEST(Backward, SoftmaxCrossEntropyAndParameterGradients) {
  Graph g = random_cnn(21);
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  const Index label = 1;
  auto loss_of = [&](const Graph& graph) {
    return softmax_cross_entropy(forward(graph, x).output().data(), label).loss;
  };
  Trace t = forward(g, x);
  auto lg = softmax_cross_entropy(t.output().data(), label);
  ParamGrads pg = ParamGrads::zeros_like(g);
  Tensor seed(t.output().shape(), lg.dlogits);
  backward(g, t, seed, 0, &pg);

  // Logit gradient of the loss.
  Tensor logits = t.output();
  Tensor fd_logits = finite_difference(
      [&](const Tensor& p) { return softmax_cross_entropy(p.data(), label).loss; }, logits);
  EXPECT_LT(max_relative_error(Tensor(logits.shape(), lg.dlogits), fd_logits), 1e-6);

  // Weight gradients of both conv layers and the dense layer.
  for (std::size_t node : {0u, 3u, 6u}) {
    Layer& layer = g.node(node).layer;
    Tensor* wt = std::holds_alternative<Conv2d>(layer) ? &std::get<Conv2d>(layer).weight
                                                        : &std::get<Dense>(layer).weight;
    Tensor original = *wt;
    Tensor fd = finite_difference(
        [&](const Tensor& p) {
          *wt = p;
          double v = loss_of(g);
          *wt = original;
          return v;
        },
        original);
    EXPECT_LT(max_relative_error(Tensor(original.shape(), pg.weight[node]), fd), 1e-6) << node;
  }
}

TEST(Backward, IsLinearInTheSeed) {
  Graph g = random_cnn(13);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({8, 8, 3}, rng, 0.0, 1.0);
  Trace t = forward(g, x);
  const double a = 0.7, b = -2.5;
  Tensor ga = grad_wrt(g, t, 0, 0), gb = grad_wrt(g, t, 1, 0);
  Tensor seed({2});
  seed[0] = a;
  seed[1] = b;
  Tensor combo = backward(g, t, seed)[0];
  for (Index i = 0; i < combo.size(); ++i) EXPECT_NEAR(combo[i], a * ga[i] + b * gb[i], 1e-12);
}

TEST(Backward, MaxPoolTieGoesToFirstElement) {
  Graph g;
  g.add("pool", MaxPool2{});
  Tensor x = Tensor::filled({2, 2, 1}, 1.0);
  Trace t = forward(g, x);
  Tensor d = backward(g, t, Tensor::filled({1, 1, 1}, 1.0))[0];
  EXPECT_EQ(d[0], 1.0);
  EXPECT_EQ(d[1] + d[2] + d[3], 0.0);
}

TEST(Determinism, RepeatedPassesAreBitIdentical) {
  Graph g = random_cnn(77);
  std::mt19937_64 rng(77);
  Tensor x = random_tensor({12, 12, 3}, rng, 0.0, 1.0);
  Tensor g1 = grad_wrt(g, x, 0, 0), g2 = grad_wrt(g, x, 0, 0);
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(forward(g, x).output(), forward(g, x).output());
}
