#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cactus/compress.hpp"
#include "cactus/error.hpp"
#include "cactus/ops.hpp"
#include "test_support.hpp"

namespace cactus {
namespace {

// Sort oracle: the k smallest (score, flat index) pairs among `members`.
std::vector<std::size_t> brute_lowest(const std::vector<double>& score, std::vector<std::size_t> members,
                                      std::size_t k) {
  std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
    return score[a] != score[b] ? score[a] < score[b] : a < b;
  });
  members.resize(k);
  return members;
}

std::vector<double> brute_mask(const Network& net, double ratio, bool global) {
  const auto flat = net.flat_params();
  std::vector<double> score(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) score[i] = std::abs(flat[i]);
  std::vector<double> keep(flat.size(), 1.0);
  std::vector<std::vector<std::size_t>> groups;
  for (const ParamTensor& p : net.params()) {
    if (p.role != ParamRole::Weight) continue;
    if (groups.empty() || !global) groups.emplace_back();
    for (std::size_t i = 0; i < p.value.numel(); ++i) groups.back().push_back(p.flat_offset + i);
  }
  for (const auto& g : groups) {
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(g.size())));
    for (std::size_t i : brute_lowest(score, g, k)) keep[i] = 0.0;
  }
  return keep;
}

TEST(PruneSpec, MethodCodesRoundTrip) {
  for (const char* code : {"GUl1", "GUl2", "GUg", "LUl1", "LSl2", "GSl2", "LSg", "GSl1"}) {
    EXPECT_EQ(prune_method_code(parse_prune_method(code)), code);
  }
  const PruneSpec s = parse_prune_method("GSl2", 0.5);
  EXPECT_EQ(s.scope, PruneScope::Global);
  EXPECT_EQ(s.structure, PruneStructure::StructuredChannel);
  EXPECT_EQ(s.score, PruneScore::L2);
  EXPECT_EQ(s.ratio, 0.5);
  for (const char* bad : {"", "XUl1", "GXl1", "GUl3", "GU"}) EXPECT_THROW(parse_prune_method(bad), ConfigError);
  EXPECT_THROW(parse_prune_method("GUl1", 1.0).validate(), ConfigError);
  EXPECT_THROW(compute_mask(Network::build(resolve_architecture("linear_blobs"), 0), parse_prune_method("GUl1", -0.1)),
               ConfigError);
}

TEST(Prune, UnstructuredSparsityIsExactFloor) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 1);
  std::size_t d = 0;
  for (const ParamTensor& p : net.params()) d += p.role == ParamRole::Weight ? p.value.numel() : 0;
  for (double ratio : {0.25, 0.5, 0.75, 0.9, 0.95, 0.99}) {
    for (const char* code : {"GUl1", "LUl1", "GUl2"}) {
      const PruningMask m = compute_mask(net, parse_prune_method(code, ratio));
      const auto expected = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(d)));
      EXPECT_EQ(m.target_count, d);
      if (code[0] == 'G') {
        EXPECT_EQ(m.pruned_count, expected) << code << " " << ratio;
        EXPECT_DOUBLE_EQ(m.sparsity(), static_cast<double>(expected) / static_cast<double>(d));
      }
      EXPECT_EQ(m.pruned_count, static_cast<std::size_t>(std::count(m.keep.begin(), m.keep.end(), 0.0)));
    }
  }
}

TEST(Prune, MatchesSortOracle) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Network net = testing::random_network({{5}, {DenseSpec{5, 7}, ReluSpec{}, DenseSpec{7, 3}}}, 20 + t);
    const double ratio = uniform(rng, 0.0, 0.95);
    EXPECT_EQ(compute_mask(net, parse_prune_method("GUl1", ratio)).keep, brute_mask(net, ratio, true));
    EXPECT_EQ(compute_mask(net, parse_prune_method("LUl1", ratio)).keep, brute_mask(net, ratio, false));
    // Squared magnitude ranks identically to absolute magnitude.
    EXPECT_EQ(compute_mask(net, parse_prune_method("GUl2", ratio)).keep, brute_mask(net, ratio, true));
  }
}

TEST(Prune, TiesBreakTowardsLowerIndex) {
  Network net = Network::build({{2}, {DenseSpec{2, 2, false}}}, 0);
  net.set_flat_params(std::vector<double>{0.5, -0.5, 0.5, 0.1});
  const PruningMask m = compute_mask(net, parse_prune_method("GUl1", 0.5));
  EXPECT_EQ(m.keep, (std::vector<double>{0, 1, 1, 0}));
}

TEST(Prune, GradientScoreUsesProduct) {
  Network net = Network::build({{2}, {DenseSpec{2, 2, false}}}, 0);
  net.set_flat_params(std::vector<double>{1.0, 0.1, 2.0, 0.5});
  const std::vector<double> grads{0.01, 10.0, 0.1, 0.1};
  const PruningMask m = compute_mask(net, parse_prune_method("GUg", 0.5), grads);
  // |g w| = 0.01, 1.0, 0.2, 0.05
  EXPECT_EQ(m.keep, (std::vector<double>{0, 1, 1, 0}));
  EXPECT_THROW(compute_mask(net, parse_prune_method("GUg", 0.5)), Error);
}

TEST(Prune, StructuredRemovesWholeRowsAndKeepsClassifier) {
  Network net = Network::build({{2}, {DenseSpec{2, 3}, ReluSpec{}, DenseSpec{3, 2}}}, 0);
  // rows of the hidden layer: L1 norms 3, 0.3, 1.5; biases follow
  net.set_flat_params(std::vector<double>{1, 2, 0.1, -0.2, -1, 0.5, 9, 9, 9, 1, 1, 1, 1, 1, 1, 0, 0});
  const PruningMask m = compute_mask(net, parse_prune_method("LSl1", 0.34));
  const std::vector<double> want{1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(m.keep, want);
  EXPECT_THROW(compute_mask(net, parse_prune_method("LSl1", 0.9)), ConfigError);
}

TEST(Prune, GlobalStructuredNormalisesByChannelSize) {
  Network net = Network::build({{1}, {DenseSpec{1, 2, false}, ReluSpec{}, DenseSpec{2, 2, false}, ReluSpec{},
                                      DenseSpec{2, 1, false}}},
                               0);
  // layer 0 rows: |0.4|, |0.5| (size 1); layer 2 rows: 0.3+0.3, 1+1 (size 2 -> 0.3, 1.0)
  net.set_flat_params(std::vector<double>{0.4, 0.5, 0.3, 0.3, 1.0, 1.0, 1.0, 1.0});
  const PruningMask m = compute_mask(net, parse_prune_method("GSl1", 0.25));
  EXPECT_EQ(m.keep, (std::vector<double>{1, 1, 0, 0, 1, 1, 1, 1}));
}

TEST(Prune, StructuredNeverEmptiesALayer) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    const Network net = testing::random_network(
        {{4}, {DenseSpec{4, 6}, ReluSpec{}, DenseSpec{6, 5}, ReluSpec{}, DenseSpec{5, 3}}}, 30 + t);
    const double ratio = uniform(rng, 0.0, 0.99);
    for (const char* code : {"GSl1", "LSl2", "GSl2"}) {
      try {
        const PruningMask m = compute_mask(net, parse_prune_method(code, ratio));
        for (std::size_t layer : {0u, 2u}) {
          const ParamTensor& w = net.params()[*net.find_param(layer, ParamRole::Weight)];
          const std::size_t rows = w.value.dim(0), cols = w.value.numel() / rows;
          std::size_t alive = 0;
          for (std::size_t r = 0; r < rows; ++r) alive += m.keep[w.flat_offset + r * cols] != 0.0;
          EXPECT_GT(alive, 0u);
        }
      } catch (const ConfigError&) {
      }
    }
  }
}

TEST(Prune, ZeroRatioKeepsEverything) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 4);
  const PruningMask m = compute_mask(net, parse_prune_method("GSl2", 0.0));
  EXPECT_EQ(m.pruned_count, 0u);
  EXPECT_TRUE(std::all_of(m.keep.begin(), m.keep.end(), [](double v) { return v == 1.0; }));
}

TEST(Prune, MaterialisedNetworkMatchesMaskedView) {
  Rng rng(5);
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 5);
  const PruningMask m = compute_mask(net, parse_prune_method("LUl1", 0.7));
  const NetworkView view = apply_mask(net, m);
  const Network hard = materialize(view);
  const Tensor x = testing::random_inputs(rng, {2}, 10);
  EXPECT_EQ(forward(view, x), forward(NetworkView(hard), x));
  const auto flat = hard.flat_params();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (m.keep[i] == 0.0) EXPECT_EQ(flat[i], 0.0);
  }
}

TEST(Prune, MaskEncodingRoundTrips) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 6);
  const PruningMask m = compute_mask(net, parse_prune_method("GUl1", 0.5));
  const PruningMask back = decode_mask(encode_mask(m));
  EXPECT_EQ(back.keep, m.keep);
  EXPECT_EQ(back.pruned_count, m.pruned_count);
  EXPECT_EQ(back.target_count, m.target_count);
  EXPECT_THROW(apply_mask(Network::build(resolve_architecture("linear_blobs"), 0), m), ShapeError);
}

TEST(Quant, RoundsHalfAwayFromZero) {
  const QuantSpec g = QuantSpec::grid(1.0);
  EXPECT_EQ(quantize_value(0.5, g), 1.0);
  EXPECT_EQ(quantize_value(-0.5, g), -1.0);
  EXPECT_EQ(quantize_value(2.5, g), 3.0);
  EXPECT_EQ(quantize_value(2.49, g), 2.0);
  EXPECT_EQ(quantize_value(0.3, QuantSpec::grid(0.25)), 0.25);
}

TEST(Quant, CalibrationHitsEndpoints) {
  const std::vector<double> w{-0.3, 0.1, 0.9};
  const QuantSpec s = calibrate_quant(w, 4);
  EXPECT_EQ(s.q_min, -8);
  EXPECT_EQ(s.q_max, 7);
  EXPECT_DOUBLE_EQ(s.scale, 1.2 / 15);
  EXPECT_DOUBLE_EQ(quantize_value(-0.3, s), -0.3);
  EXPECT_NEAR(quantize_value(0.9, s), 0.9, 1e-15);
  // values outside the range clamp to the end levels
  EXPECT_NEAR(quantize_value(5.0, s), s.range_hi(), 1e-15);
  EXPECT_NEAR(quantize_value(-5.0, s), s.range_lo(), 1e-15);
}

TEST(Quant, ConstantWeightsAreExact) {
  const std::vector<double> w{0.7, 0.7};
  const QuantSpec s = calibrate_quant(w, 8);
  EXPECT_EQ(s.scale, 1.0);
  EXPECT_EQ(quantize_value(0.7, s), 0.7);
  EXPECT_THROW(calibrate_quant(w, 1), ConfigError);
  EXPECT_THROW(calibrate_quant(w, 33), ConfigError);
}

TEST(Quant, ErrorAtMostHalfStepInRange) {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const int bits = 2 + static_cast<int>(uniform_index(rng, 7));
    std::vector<double> w(64);
    for (double& v : w) v = uniform(rng, -2.0, 2.0);
    const QuantSpec s = calibrate_quant(w, bits);
    for (int k = 0; k < 200; ++k) {
      const double v = uniform(rng, s.range_lo(), s.range_hi());
      EXPECT_LE(std::abs(quantize_value(v, s) - v), s.q_step() / 2);
    }
  }
}

TEST(Quant, IsIdempotent) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 8);
  const Network once = quantize_weights(net, 4);
  const Network twice = quantize_weights(once, calibrate_network(net, 4, QuantGranularity::PerLayer));
  EXPECT_EQ(once.flat_params(), twice.flat_params());
}

TEST(Quant, PerLayerSharesOneSpecAndSkipsBatchNorm) {
  const Network net =
      testing::random_network(parse_architecture("in 3; dense 3 4; bn 4; relu; dense 4 2"), 9);
  const QuantPlan layer = calibrate_network(net, 8, QuantGranularity::PerLayer);
  ASSERT_EQ(layer.entries.size(), 2u);
  EXPECT_EQ(layer.entries[0].tensors.size(), 2u);
  const QuantPlan tensor = calibrate_network(net, 8, QuantGranularity::PerTensor);
  EXPECT_EQ(tensor.entries.size(), 4u);
  const Network q = quantize_weights(net, layer);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    const ParamTensor& p = net.params()[i];
    if (p.role == ParamRole::BnGamma || p.role == ParamRole::BnBeta) EXPECT_EQ(q.params()[i].value, p.value);
  }
  EXPECT_EQ(q.bn_stats(), net.bn_stats());
}

TEST(Quant, EightBitsStayCloseToOriginal) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 10);
  const QuantPlan plan = calibrate_network(net, 8, QuantGranularity::PerLayer);
  const Network q = quantize_weights(net, plan);
  for (const QuantEntry& e : plan.entries) {
    for (std::size_t t : e.tensors) {
      for (std::size_t i = 0; i < net.params()[t].value.numel(); ++i) {
        EXPECT_LE(std::abs(q.params()[t].value[i] - net.params()[t].value[i]), e.spec.q_step() / 2);
      }
    }
  }
}

TEST(Quant, PlanEncodingRoundTrips) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 11);
  const QuantPlan plan = calibrate_network(net, 4, QuantGranularity::PerTensor);
  const QuantPlan back = decode_quant_plan(encode_quant_plan(plan));
  ASSERT_EQ(back.entries.size(), plan.entries.size());
  EXPECT_EQ(back.granularity, plan.granularity);
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    EXPECT_EQ(back.entries[i].tensors, plan.entries[i].tensors);
    EXPECT_EQ(back.entries[i].spec.scale, plan.entries[i].spec.scale);
    EXPECT_EQ(back.entries[i].spec.zero_point, plan.entries[i].spec.zero_point);
    EXPECT_EQ(back.entries[i].spec.q_min, plan.entries[i].spec.q_min);
    EXPECT_EQ(back.entries[i].spec.q_max, plan.entries[i].spec.q_max);
  }
}

TEST(Quant, StraightThroughGradient) {
  const QuantSpec s = calibrate_quant(std::vector<double>{-1.0, 1.0}, 2);  // levels at -1, -1/3, 1/3, 1
  Tape tape;
  const Var w = tape.leaf(Tensor::from({0.2, 0.9, 3.0}));
  const Var q = ste_quantize(w, s);
  EXPECT_NEAR(q.value()[0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(q.value()[1], 1.0, 1e-15);
  EXPECT_NEAR(q.value()[2], 1.0, 1e-15);
  const Gradients g = tape.backward(sum(q));
  EXPECT_EQ(g[w], Tensor::from({1.0, 1.0, 0.0}));
}

}  // namespace
}  // namespace cactus
