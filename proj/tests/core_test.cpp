#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "kdbench/core/grad_check.hpp"
#include "kdbench/core/optimizer.hpp"
#include "support/op_cases.hpp"

namespace kdb {
namespace {

using testing::DGraph;
using testing::DTensor;
using testing::DVar;
using testing::random_tensor;

TEST(Ops, MatmulIdentityReturnsOperand) {
  Graph g;
  Tensor m = Tensor::matrix({{1.5f, -2.0f, 3.0f}, {0.25f, 4.0f, -1.0f}});
  Var out = ops::matmul(g.constant(Tensor::matrix({{1, 0}, {0, 1}})), g.constant(m));
  EXPECT_EQ(out.value(), m);
}

TEST(Ops, MeanPoolOfIdenticalRowsIsThatRow) {
  Graph g;
  Tensor x = Tensor::matrix({{1, 2, 3}, {1, 2, 3}, {1, 2, 3}, {1, 2, 3}});
  Var out = ops::mean_pool(g.constant(x));
  EXPECT_EQ(out.value(), Tensor::matrix({{1, 2, 3}}));
}

TEST(Ops, MeanPoolIgnoresMaskedRows) {
  Graph g;
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {100, 100}});
  const std::vector<float> mask{1, 1, 0};
  Var out = ops::mean_pool(g.constant(x), mask);
  EXPECT_EQ(out.value(), Tensor::matrix({{2, 3}}));
}

TEST(Ops, DepthwiseConvWithZeroKernelIsZero) {
  Graph g;
  std::mt19937_64 rng(3);
  Tensor x = tensor_cast<float>(random_tensor({6, 4}, rng));
  Var out = ops::conv1d_depthwise(g.constant(x), g.constant(Tensor({3, 4}, 0.0f)),
                                  g.constant(Tensor({4}, 0.0f)));
  EXPECT_EQ(out.value(), Tensor({6, 4}, 0.0f));
}

TEST(Ops, DepthwiseConvKeepsLengthAndPadsWithZeros) {
  Graph g;
  Tensor x = Tensor::matrix({{1}, {2}, {3}});
  Tensor k = Tensor::matrix({{1}, {10}, {100}});
  Var out = ops::conv1d_depthwise(g.constant(x), g.constant(k), g.constant(Tensor::vector({0})));
  // y[t] = x[t-1] + 10 x[t] + 100 x[t+1]
  EXPECT_EQ(out.value(), Tensor::matrix({{210}, {321}, {32}}));
}

TEST(Ops, ShapeMismatchRaisesDimensionError) {
  Graph g;
  Var a = g.constant(Tensor({2, 3}, 1.0f));
  Var b = g.constant(Tensor({2, 3}, 1.0f));
  EXPECT_THROW(ops::matmul(a, b), DimensionError);
  EXPECT_THROW(ops::add(a, g.constant(Tensor({4}, 1.0f))), DimensionError);
  EXPECT_THROW(ops::mul(a, g.constant(Tensor({3, 2}, 1.0f))), DimensionError);
  EXPECT_THROW(ops::slice(a, 0, 1, 3), DimensionError);
}

TEST(Ops, NonFiniteOutputRaisesNumericError) {
  Graph g;
  Var a = g.constant(Tensor::vector({1e30f, 1e30f}).reshaped({1, 2}));
  EXPECT_THROW(ops::mul(a, a), NumericError);
}

TEST(Ops, MaskedFillRequiresBinaryMask) {
  Graph g;
  Var a = g.constant(Tensor({1, 2}, 1.0f));
  EXPECT_THROW(ops::masked_fill(a, Tensor::matrix({{0.5f, 0}}), 0.0f), ContractError);
  Var filled = ops::masked_fill(a, Tensor::matrix({{1, 0}}), -3.0f);
  EXPECT_EQ(filled.value(), Tensor::matrix({{-3, 1}}));
}

TEST(Ops, EmbeddingLookupRejectsOutOfRangeIds) {
  Graph g;
  Var table = g.constant(Tensor({3, 2}, 1.0f));
  const std::vector<std::size_t> ids{0, 3};
  EXPECT_THROW(ops::embedding_lookup(table, ids), ContractError);
}

TEST(Ops, DropoutIsIdentityWithZeroRateOrInEvalMode) {
  std::mt19937_64 rng(1);
  Tensor x = tensor_cast<float>(random_tensor({3, 4}, rng));
  Graph train(Graph::Mode::record, true, 7);
  Var in = train.input(x);
  EXPECT_EQ(ops::dropout(in, 0.0f).id, in.id);
  Graph eval(Graph::Mode::record, false, 7);
  Var in2 = eval.input(x);
  EXPECT_EQ(ops::dropout(in2, 0.5f).value(), x);
  Var dropped = ops::dropout(in, 0.5f);
  EXPECT_NE(dropped.value(), x);
  EXPECT_THROW(ops::dropout(in, 1.0f), ParameterError);
}

TEST(Softmax, TemperatureExamples) {
  const Tensor q = softmax_with_temperature(Tensor::vector({2, 0}), 2.0f);
  EXPECT_NEAR(q[0], 0.7311f, 1e-4f);
  EXPECT_NEAR(q[1], 0.2689f, 1e-4f);
  EXPECT_EQ(q, softmax(Tensor::vector({1, 0})));

  const Tensor uniform = softmax_with_temperature(Tensor::vector({4, 4, 4}), 0.3f);
  for (float v : uniform.data()) EXPECT_NEAR(v, 1.0f / 3.0f, 1e-7f);

  const Tensor hot = softmax_with_temperature(Tensor::vector({5, -5}), 100.0f);
  EXPECT_LT(std::fabs(hot[0] - 0.5f), 0.05f);
}

TEST(Softmax, TemperatureOneIsBitIdenticalToPlainSoftmax) {
  std::mt19937_64 rng(11);
  for (int s = 0; s < 20; ++s) {
    const Tensor z = tensor_cast<float>(random_tensor({3, 5}, rng, 3.0));
    EXPECT_EQ(softmax_with_temperature(z, 1.0f), softmax(z));
    Graph g;
    Var plain = ops::softmax(g.constant(z));
    Var tempered = ops::softmax_with_temperature(g.constant(z), 1.0f);
    EXPECT_EQ(plain.value(), tempered.value());
  }
}

TEST(Softmax, NonPositiveTemperatureIsRejected) {
  EXPECT_THROW(softmax_with_temperature(Tensor::vector({1, 2}), 0.0f), ParameterError);
  EXPECT_THROW(softmax_with_temperature(Tensor::vector({1, 2}), -1.0f), ParameterError);
  Graph g;
  EXPECT_THROW(ops::softmax_with_temperature(g.constant(Tensor({1, 2}, 0.0f)), 0.0f), ParameterError);
}

TEST(Softmax, SimplexAndArgmaxInvariantAcrossTemperatures) {
  std::mt19937_64 rng(5);
  for (int s = 0; s < 200; ++s) {
    const Tensor z = tensor_cast<float>(random_tensor({1, 6}, rng, 4.0));
    const std::size_t best = argmax(z.data());
    for (float t : {0.1f, 0.5f, 1.0f, 2.0f, 10.0f, 100.0f}) {
      const Tensor q = softmax_with_temperature(z, t);
      float total = 0.0f;
      for (float v : q.data()) {
        EXPECT_GE(v, 0.0f);
        total += v;
      }
      EXPECT_NEAR(total, 1.0f, 1e-6f);
      EXPECT_EQ(argmax(q.data()), best);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Graph g;
  Var w = g.input(Tensor({2, 3}, 0.7f));
  g.backward(ops::sum(w));
  EXPECT_EQ(*g.grad(w), Tensor({2, 3}, 1.0f));
}

TEST(Backward, HalfSquaredNormGivesInput) {
  Graph g;
  std::mt19937_64 rng(2);
  Tensor x = tensor_cast<float>(random_tensor({3, 2}, rng));
  Var w = g.input(x);
  g.backward(ops::scalar_mul(ops::sum(ops::mul(w, w)), 0.5f));
  EXPECT_EQ(*g.grad(w), x);
}

TEST(Backward, NonScalarLossIsAContractError) {
  Graph g;
  Var w = g.input(Tensor({2, 2}, 1.0f));
  EXPECT_THROW(g.backward(ops::relu(w)), ContractError);
  Graph inference(Graph::Mode::inference);
  Var v = inference.input(Tensor({1}, 1.0f));
  EXPECT_THROW(inference.backward(ops::sum(v)), ContractError);
}

TEST(Backward, ParameterGradsAccumulateAcrossPasses) {
  Parameter p{"w", Tensor::vector({1, 2}), {}};
  for (int pass = 0; pass < 3; ++pass) {
    Graph g;
    g.backward(ops::sum(g.param(p)));
  }
  EXPECT_EQ(p.grad, Tensor::vector({3, 3}));
  p.zero_grad();
  EXPECT_EQ(p.grad, Tensor::vector({0, 0}));
}

TEST(Backward, InferenceGraphRecordsNothing) {
  Parameter p{"w", Tensor({2, 2}, 1.0f), {}};
  Graph g(Graph::Mode::inference);
  Var out = ops::matmul(g.param(p), g.param(p));
  EXPECT_FALSE(g.node(out.id).requires_grad);
  EXPECT_TRUE(p.grad.empty());
}

TEST(Backward, IsDeterministic) {
  std::mt19937_64 rng(9);
  const Tensor x = tensor_cast<float>(random_tensor({4, 5}, rng));
  const Tensor w = tensor_cast<float>(random_tensor({5, 3}, rng));
  auto run = [&] {
    Graph g(Graph::Mode::record, true, 42);
    Var xv = g.input(x);
    Var h = ops::dropout(ops::tanh(ops::matmul(xv, g.constant(w))), 0.2f);
    g.backward(ops::sum(ops::log_softmax(h)));
    return *g.grad(xv);
  };
  EXPECT_EQ(run(), run());
}

TEST(Backward, ReusedGraphMatchesFreshGraph) {
  std::mt19937_64 rng(4);
  const Tensor x = tensor_cast<float>(random_tensor({3, 3}, rng));
  Graph reused;
  Tensor first;
  for (int i = 0; i < 3; ++i) {
    reused.reset();
    Var xv = reused.input(x);
    reused.backward(ops::sum(ops::softmax(ops::matmul(xv, xv))));
    if (i == 0) first = *reused.grad(xv);
    EXPECT_EQ(*reused.grad(xv), first);
  }
}

TEST(GradCheck, LinearMapIsExact) {
  std::mt19937_64 rng(1);
  const DTensor w = random_tensor({4, 3}, rng);
  const DTensor x = random_tensor({2, 4}, rng);
  const double err = grad_check(
      [&](DGraph& g, DVar v) { return testing::readout(g, ops::matmul(v, g.constant(w)), 5); }, x, 1e-3);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const DTensor logits = random_tensor({3, 5}, rng, 2.0);
    DTensor onehot({3, 5}, 0.0);
    for (std::size_t r = 0; r < 3; ++r) onehot.at(r, (seed + r) % 5) = 1.0;
    const double err = grad_check(
        [&](DGraph& g, DVar v) {
          return ops::scalar_mul(ops::sum(ops::mul(ops::log_softmax(v), g.constant(onehot))), -1.0);
        },
        logits, 1e-3);
    EXPECT_LT(err, 1e-3) << "seed " << seed;
  }
}

TEST(GradCheck, LayerNormAndAttentionBlock) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed + 100);
    const std::size_t len = 4;
    const std::size_t h = 6;
    const DTensor x = random_tensor({len, h}, rng);
    const DTensor wq = random_tensor({h, h}, rng, 0.5);
    const DTensor wk = random_tensor({h, h}, rng, 0.5);
    const DTensor wv = random_tensor({h, h}, rng, 0.5);
    const DTensor gamma = random_tensor({h}, rng);
    const DTensor beta = random_tensor({h}, rng);
    auto block = [&](DGraph& g, DVar v) {
      DVar normed = ops::layer_norm(v, g.constant(gamma), g.constant(beta));
      DVar q = ops::matmul(normed, g.constant(wq));
      DVar k = ops::matmul(normed, g.constant(wk));
      DVar val = ops::matmul(normed, g.constant(wv));
      DVar scores = ops::scalar_mul(ops::matmul(q, ops::transpose(k)), 1.0 / std::sqrt(double(h)));
      DVar attn = ops::matmul(ops::softmax(scores), val);
      return testing::readout(g, ops::add(v, attn), seed);
    };
    EXPECT_LT(grad_check(block, x, 1e-3), 1e-3) << "seed " << seed;
  }
}

TEST(GradCheck, TwoLayerMlpMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<BasicParameter<double>> params{
        {"w1", random_tensor({4, 8}, rng, 0.5), {}},
        {"b1", random_tensor({8}, rng, 0.1), {}},
        {"w2", random_tensor({8, 3}, rng, 0.5), {}},
        {"b2", random_tensor({3}, rng, 0.1), {}},
    };
    const DTensor x = random_tensor({5, 4}, rng);
    auto loss = [&](DGraph& g) {
      DVar h = ops::tanh(ops::linear(g.constant(x), g.param(params[0]), g.param(params[1])));
      DVar out = ops::linear(h, g.param(params[2]), g.param(params[3]));
      return ops::mean(ops::log_softmax(out));
    };
    EXPECT_LT(grad_check_parameters(loss, std::span(params), 1e-3), 1e-3);
  }
}

TEST(GradCheck, NonScalarFunctionIsAContractError) {
  const DTensor x({2, 2}, 1.0);
  EXPECT_THROW(grad_check([](DGraph&, DVar v) { return ops::relu(v); }, x, 1e-3), ContractError);
  EXPECT_THROW(grad_check([](DGraph&, DVar v) { return ops::sum(v); }, x, 0.0), ParameterError);
}

TEST(GradCheck, EveryOpKindOverTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& c : testing::make_op_cases(seed)) {
      EXPECT_LT(grad_check(c.fn, c.input, 1e-3), 1e-3) << c.name << " seed " << seed;
    }
  }
}

TEST(Optimizer, SgdStep) {
  std::vector<Parameter> params{{"p", Tensor::vector({1.0f}), Tensor::vector({2.0f})}};
  Optimizer::sgd(0.1f).step(params);
  EXPECT_FLOAT_EQ(params[0].value[0], 0.8f);
}

TEST(Optimizer, AdamZeroGradientLeavesParameterUnchanged) {
  std::vector<Parameter> params{{"p", Tensor::vector({1.5f, -2.0f}), Tensor::vector({0.0f, 0.0f})}};
  Optimizer opt = Optimizer::adam(0.01f);
  opt.step(params);
  EXPECT_EQ(params[0].value, Tensor::vector({1.5f, -2.0f}));
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Optimizer, AdamMinimisesQuadratic) {
  std::vector<Parameter> params{{"p", Tensor::vector({1.0f}), {}}};
  Optimizer opt = Optimizer::adam(0.05f);
  for (int step = 0; step < 200; ++step) {
    params[0].grad = Tensor::vector({2.0f * params[0].value[0]});
    opt.step(params);
    EXPECT_EQ(opt.steps(), step + 1);
  }
  EXPECT_LT(std::fabs(params[0].value[0]), 0.01f);
}

TEST(Optimizer, ShapeMismatchIsAContractError) {
  std::vector<Parameter> params{{"p", Tensor::vector({1.0f, 2.0f}), Tensor::vector({1.0f})}};
  EXPECT_THROW(Optimizer::adam(0.1f).step(params), ContractError);
  EXPECT_THROW(Optimizer::sgd(0.0f), ParameterError);
}

TEST(Optimizer, MomentBuffersTrackParameterShapes) {
  std::vector<Parameter> params{{"a", Tensor({2, 3}, 1.0f), Tensor({2, 3}, 0.5f)},
                                {"b", Tensor({4}, 1.0f), Tensor({4}, 0.5f)}};
  Optimizer opt = Optimizer::adam(0.1f);
  opt.step(params);
  ASSERT_EQ(opt.first_moments().size(), 2u);
  EXPECT_EQ(opt.first_moments()[0].shape(), (Shape{2, 3}));
  EXPECT_EQ(opt.second_moments()[1].shape(), (Shape{4}));
  params.pop_back();
  EXPECT_THROW(opt.step(params), ContractError);
}

}  // namespace
}  // namespace kdb
