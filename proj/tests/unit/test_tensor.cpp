#include <gtest/gtest.h>

#include <cmath>

#include "cactus/error.hpp"
#include "cactus/ops.hpp"
#include "test_support.hpp"

namespace cactus {
namespace {

using testing::compare_gradients;
using testing::finite_difference;

TEST(Tensor, ScalarAndShape) {
  Tensor s;
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.numel(), 1u);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.row_size(), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_EQ(shape_numel({}), 1u);
  EXPECT_EQ(shape_numel({4, 0}), 0u);
}

TEST(Tensor, RowsGatherAndSlice) {
  const Tensor t = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.slice_rows(1, 3), Tensor::from({2, 2}, {3, 4, 5, 6}));
  const std::vector<std::size_t> rows{2, 0};
  EXPECT_EQ(t.gather_rows(rows), Tensor::from({2, 2}, {5, 6, 1, 2}));
}

TEST(Ops, ReluDefinition) {
  Tape tape;
  const Var x = tape.constant(Tensor::from({-1, 0, 2}));
  EXPECT_EQ(relu(x).value(), Tensor::from({0, 0, 2}));
}

TEST(Ops, MatmulIdentity) {
  Tape tape;
  const Var eye = tape.constant(Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const Var v = tape.constant(Tensor::from({3, 1}, {0.3, -2.0, 7.5}));
  EXPECT_EQ(matmul(eye, v).value(), v.value());
}

TEST(Ops, SoftmaxCrossEntropyUniform) {
  Tape tape;
  const Var z = tape.constant(Tensor::from({1, 2}, {0, 0}));
  const std::vector<int> y{0};
  EXPECT_NEAR(softmax_cross_entropy(z, y).value()[0], std::log(2.0), 1e-15);
}

TEST(Ops, LogSumExpIsShiftStable) {
  Tape tape;
  const Var z = tape.constant(Tensor::from({1, 2}, {1000, 1000}));
  EXPECT_NEAR(log_sum_exp(z).value()[0], 1000 + std::log(2.0), 1e-12);
}

TEST(Ops, ShapeErrorsNameThePrimitive) {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}));
  const Var b = tape.constant(Tensor({2, 2}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(linear(a, b, std::nullopt), ShapeError);
}

TEST(Backward, Square) {
  Tape tape;
  const Var w = tape.leaf(Tensor::scalar(3.0));
  const Gradients g = tape.backward(mul(w, w));
  EXPECT_DOUBLE_EQ(g[w].item(), 6.0);
}

TEST(Backward, ReluInactiveAndKink) {
  for (double at : {-1.0, 0.0}) {
    Tape tape;
    const Var w = tape.leaf(Tensor::scalar(at));
    EXPECT_EQ(tape.backward(relu(w))[w].item(), 0.0) << "at " << at;
  }
}

TEST(Backward, RejectsNonScalarAndForeignOutputs) {
  Tape tape, other;
  const Var w = tape.leaf(Tensor::from({1, 2}));
  EXPECT_THROW(tape.backward(w), Error);
  const Var s = other.leaf(Tensor::scalar(1.0));
  EXPECT_THROW(tape.backward(s), Error);
}

TEST(Backward, UntouchedLeafGetsZeros) {
  Tape tape;
  const Var a = tape.leaf(Tensor::scalar(2.0));
  const Var b = tape.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}));
  const Gradients g = tape.backward(scale(a, 4.0));
  EXPECT_EQ(g[b], Tensor({2, 2}));
  EXPECT_EQ(g[a].item(), 4.0);
}

TEST(Backward, SharedInputAccumulates) {
  Tape tape;
  const Var w = tape.leaf(Tensor::scalar(1.5));
  const Var y = add(mul(w, w), add(w, scale(w, 2.0)));
  EXPECT_DOUBLE_EQ(tape.backward(y)[w].item(), 2 * 1.5 + 3.0);
}

// Full-batch loss of a random 2-layer net as a function of the flat parameters.
struct TwoLayerProblem {
  Network net;
  Tensor x;
  std::vector<int> y;

  double loss(const std::vector<double>& theta) const {
    Network n = net;
    n.set_flat_params(theta);
    Tape tape;
    const BoundParams p = bind_params(tape, NetworkView(n), false);
    return mean(softmax_cross_entropy(forward(n, p, tape.constant(x)), y)).value().item();
  }
  std::vector<double> grad() const {
    Tape tape;
    const BoundParams p = bind_params(tape, NetworkView(net), true);
    return flat_gradient(tape.backward(mean(softmax_cross_entropy(forward(net, p, tape.constant(x)), y))), p);
  }
};

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const Architecture arch{{4}, {DenseSpec{4, 6}, ReluSpec{}, DenseSpec{6, 3}}};
    TwoLayerProblem prob{testing::random_network(arch, seed), testing::random_inputs(rng, {4}, 5),
                         testing::random_labels(rng, 5, 3)};
    if (testing::relu_kink_distance(prob.net, prob.x) < 1e-3) continue;
    const auto check = compare_gradients(
        prob.grad(), finite_difference([&](const auto& t) { return prob.loss(t); }, prob.net.flat_params()));
    EXPECT_TRUE(check.ok) << "seed " << seed << " worst " << check.worst;
  }
}

TEST(Backward, AdjointsAreLinear) {
  Tape tape;
  const Var w = tape.leaf(Tensor::from({3}, {0.4, -1.2, 2.0}));
  const Var f = sum(mul(w, w));
  const Var g = sum(relu(w));
  const double a = 2.5, b = -0.75;
  const Tensor gf = tape.backward(f)[w];
  const Tensor gg = tape.backward(g)[w];
  const Tensor gc = tape.backward(add(scale(f, a), scale(g, b)))[w];
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(gc[i], a * gf[i] + b * gg[i], 1e-15);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Rng rng(7);
    const Architecture arch{{3}, {DenseSpec{3, 5}, ReluSpec{}, DenseSpec{5, 2}}};
    TwoLayerProblem prob{testing::random_network(arch, 3), testing::random_inputs(rng, {3}, 4),
                         testing::random_labels(rng, 4, 2)};
    return prob.grad();
  };
  EXPECT_EQ(run(), run());
}

// Naive convolution straight from the definition.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  Tensor y({B, O, OH, OW});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double acc = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < K; ++ki)
              for (std::size_t kj = 0; kj < K; ++kj) {
                const long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                acc += w[((o * C + c) * K + ki) * K + kj] * x[((n * C + c) * H + r) * W + s];
              }
          y[((n * O + o) * OH + i) * OW + j] = acc;
        }
  return y;
}

TEST(Conv2d, MatchesDefinitionAndFiniteDifferences) {
  Rng rng(11);
  for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {2, 1}, {1, 1}}) {
    const Tensor x = testing::random_inputs(rng, {2, 5, 5}, 2, -1, 1);
    const Tensor w = testing::random_inputs(rng, {2, 3, 3}, 3, -1, 1);
    const Tensor b = testing::random_inputs(rng, {}, 3, -1, 1).reshaped({3});
    Tape tape;
    const Var xv = tape.leaf(x), wv = tape.leaf(w), bv = tape.leaf(b);
    const Var y = conv2d(xv, wv, bv, {stride, pad});
    EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, w, b, stride, pad)), 1e-12);

    const Tensor probe = testing::random_inputs(rng, {}, y.value().numel(), -1, 1).reshaped(y.shape());
    const Gradients g = tape.backward(sum(mul(y, tape.constant(probe))));
    auto objective = [&](const Tensor& xx, const Tensor& ww) {
      const Tensor out = conv_oracle(xx, ww, b, stride, pad);
      double acc = 0;
      for (std::size_t i = 0; i < out.numel(); ++i) acc += out[i] * probe[i];
      return acc;
    };
    const auto gx = finite_difference(
        [&](const std::vector<double>& t) { return objective(Tensor(x.shape(), t), w); }, x.to_vector());
    const auto gw = finite_difference(
        [&](const std::vector<double>& t) { return objective(x, Tensor(w.shape(), t)); }, w.to_vector());
    EXPECT_TRUE(compare_gradients(g[xv].to_vector(), gx).ok);
    EXPECT_TRUE(compare_gradients(g[wv].to_vector(), gw).ok);
  }
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor x = testing::random_inputs(rng, {3, 2, 2}, 4, -1, 2);
  const Tensor gamma = Tensor::from({1.2, -0.4, 0.9});
  const Tensor beta = Tensor::from({0.1, 0.0, -0.3});
  const Tensor probe = testing::random_inputs(rng, {3, 2, 2}, 4, -1, 1);
  auto value = [&](const Tensor& xx, const Tensor& gg) {
    Tape tape;
    const Var y = batch_norm(tape.constant(xx), tape.constant(gg), tape.constant(beta), 1e-5);
    return sum(mul(y, tape.constant(probe))).value().item();
  };
  Tape tape;
  const Var xv = tape.leaf(x), gv = tape.leaf(gamma), bv = tape.leaf(beta);
  const Gradients g = tape.backward(sum(mul(batch_norm(xv, gv, bv, 1e-5), tape.constant(probe))));
  const auto fx = finite_difference([&](const auto& t) { return value(Tensor(x.shape(), t), gamma); }, x.to_vector());
  const auto fg = finite_difference([&](const auto& t) { return value(x, Tensor(gamma.shape(), t)); }, gamma.to_vector());
  EXPECT_TRUE(compare_gradients(g[xv].to_vector(), fx).ok);
  EXPECT_TRUE(compare_gradients(g[gv].to_vector(), fg).ok);
}

TEST(Ops, SelectByLabelAndClamp) {
  Tape tape;
  const Var lo = tape.constant(Tensor::from({2, 2}, {1, 2, 3, 4}));
  const Var hi = tape.constant(Tensor::from({2, 2}, {5, 6, 7, 8}));
  const std::vector<int> y{1, 0};
  EXPECT_EQ(select_by_label(lo, hi, y).value(), Tensor::from({2, 2}, {5, 2, 3, 8}));
  const Var x = tape.leaf(Tensor::from({-0.5, 0.5, 1.5}));
  const Gradients g = tape.backward(sum(clamp(x, 0.0, 1.0)));
  EXPECT_EQ(g[x], Tensor::from({0, 1, 0}));
}

}  // namespace
}  // namespace cactus
