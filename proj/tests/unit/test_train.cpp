#include <gtest/gtest.h>

#include <cmath>

#include "cactus/error.hpp"
#include "cactus/ops.hpp"
#include "cactus/train.hpp"
#include "test_support.hpp"

namespace cactus {
namespace {

Batch two_blobs(std::size_t n, double noise, std::uint64_t seed) {
  Rng rng(seed);
  Batch b{Tensor({n, 2}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double c = label == 0 ? 0.25 : 0.75;
    b.x[2 * i] = std::clamp(c + noise * standard_normal(rng), 0.0, 1.0);
    b.x[2 * i + 1] = std::clamp(c + noise * standard_normal(rng), 0.0, 1.0);
    b.y.push_back(label);
  }
  return b;
}

StepParams mid_ramp(double eps) {
  StepParams s;
  s.lambda = 0.4;
  s.attack = {eps, 0.4 * eps};
  return s;
}

TEST(Schedule, WarmupThenLinearRampThenConstant) {
  const LambdaSchedule s;
  EXPECT_EQ(s.lambda(1), 1.0);
  EXPECT_EQ(s.lambda(250), 1.0);
  EXPECT_EQ(s.eps_fraction(250), 0.0);
  EXPECT_NEAR(s.lambda(375), 0.875, 1e-15);
  EXPECT_NEAR(s.eps_fraction(375), 0.5, 1e-15);
  EXPECT_NEAR(s.lambda(500), 0.75, 1e-15);
  EXPECT_EQ(s.eps_fraction(500), 1.0);
  EXPECT_NEAR(s.lambda(501), 0.75, 1e-15);
  EXPECT_NEAR(s.lambda(100000), 0.75, 1e-15);
  for (std::uint64_t t = 251; t <= 500; ++t) {
    EXPECT_NEAR(s.lambda(t), 1.0 - 0.25 * static_cast<double>(t - 250) / 250.0, 1e-15);
  }
}

TEST(Schedule, StepParamsFollowSchedule) {
  TrainConfig cfg;
  cfg.attack.epsilon = 0.1;
  const StepParams early = cfg.step_params(10);
  EXPECT_EQ(early.lambda, 1.0);
  EXPECT_EQ(early.attack.epsilon, 0.0);
  const StepParams late = cfg.step_params(800);
  EXPECT_NEAR(late.attack.epsilon, 0.1, 1e-15);
  EXPECT_NEAR(late.attack.tau, 0.04, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> theta{1.0, -2.0, 0.0};
  const std::vector<double> grad{0.5, -3.0, 0.0};
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamState st;
  adam_step(theta, grad, cfg, st);
  EXPECT_NEAR(theta[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(theta[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-15);
  EXPECT_EQ(theta[2], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, WeightDecayIsAddedToGradient) {
  std::vector<double> a{2.0}, b{2.0};
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  AdamConfig plain = cfg;
  plain.weight_decay = 0.0;
  AdamState sa, sb;
  for (int k = 0; k < 3; ++k) {
    const std::vector<double> g{0.3};
    adam_step(a, g, cfg, sa);
    const std::vector<double> gb{0.3 + 0.1 * b[0]};
    adam_step(b, gb, plain, sb);
  }
  EXPECT_DOUBLE_EQ(a[0], b[0]);
}

TEST(CompressionSet, IdentityMustLead) {
  EXPECT_NO_THROW(default_cactus_set().validate());
  CompressionSet empty;
  empty.elements.clear();
  EXPECT_THROW(empty.validate(), ConfigError);
  CompressionSet swapped = fixed_prune_set(parse_prune_method("GUl1"), {0.5});
  std::swap(swapped.elements[0], swapped.elements[1]);
  EXPECT_THROW(swapped.validate(), ConfigError);
  CompressionSet joint = default_cactus_set();
  joint.add_quant_proxy({});
  ASSERT_EQ(joint.elements.size(), 3u);
  EXPECT_EQ(element_kind(joint.elements[2]), "quant");
}

TEST(CactusLoss, IdentityOnlyEqualsCombinedLoss) {
  Rng rng(1);
  const Network net = testing::random_network(testing::random_mlp(rng, 2, 2), 1);
  const Batch batch = two_blobs(8, 0.1, 1);
  const StepParams step = mid_ramp(0.05);
  Rng a(3);
  const Selections sel = prepare_selections(net, identity_set(), batch, step, {0, 1, &a});
  const CactusReport r = evaluate_cactus(net, identity_set(), sel, batch, step, BnPolicy::Eval, true);
  const LossEval direct =
      evaluate_losses(net, batch, {&*sel.elements[0].centers, step.attack.tau, step.lambda, 1 - step.lambda});
  EXPECT_NEAR(r.total, direct.weighted, 1e-12);
  EXPECT_EQ(r.gradient, direct.gradient);
}

TEST(CactusLoss, ZeroRatioPruneDuplicatesIdentity) {
  Rng rng(2);
  const Network net = testing::random_network(testing::random_mlp(rng, 2, 2), 2);
  const Batch batch = two_blobs(8, 0.1, 2);
  const CompressionSet set = fixed_prune_set(parse_prune_method("GUl1"), {0.0});
  Rng a(4);
  const CactusReport r = cactus_loss(net, set, batch, mid_ramp(0.05), {0, 1, &a});
  ASSERT_EQ(r.element_losses.size(), 2u);
  EXPECT_NEAR(r.element_losses[0], r.element_losses[1], 1e-12);
  EXPECT_NEAR(r.total, r.element_losses[0], 1e-12);
}

TEST(CactusLoss, MeanOfIndependentElementLosses) {
  Rng rng(3);
  for (int t = 0; t < 5; ++t) {
    const Network net = testing::random_network(testing::random_mlp(rng, 2, 2), 30 + t);
    const Batch batch = two_blobs(8, 0.1, 30 + t);
    CompressionSet set = fixed_prune_set(parse_prune_method("LUl1"), {0.5});
    set.add_quant_proxy({});
    const StepParams step = mid_ramp(0.05);
    Rng a(t);
    const Selections sel = prepare_selections(net, set, batch, step, {0, 1, &a});
    const CactusReport r = evaluate_cactus(net, set, sel, batch, step, BnPolicy::Eval, true);
    double sum_loss = 0.0;
    std::vector<double> sum_grad(net.num_params(), 0.0);
    for (std::size_t e = 0; e < 3; ++e) {
      const LossEval le = evaluate_element(net, set, sel, e, batch, step, BnPolicy::Eval, true);
      EXPECT_NEAR(le.weighted, r.element_losses[e], 1e-12);
      sum_loss += le.weighted;
      for (std::size_t i = 0; i < sum_grad.size(); ++i) sum_grad[i] += le.gradient[i];
    }
    EXPECT_NEAR(r.total, sum_loss / 3, 1e-9);
    for (std::size_t i = 0; i < sum_grad.size(); ++i) EXPECT_NEAR(r.gradient[i], sum_grad[i] / 3, 1e-12);
  }
}

TEST(CactusLoss, HandComputedTwoElementMean) {
  Rng rng(4);
  const Network net = testing::random_network(testing::random_mlp(rng, 2, 2), 4);
  const Batch batch = two_blobs(6, 0.1, 4);
  const CompressionSet set = fixed_prune_set(parse_prune_method("GUl1"), {0.5});
  StepParams step;
  step.lambda = 1.0;  // plain cross-entropy, no attack randomness involved
  Rng a(0);
  const CactusReport r = cactus_loss(net, set, batch, step, {0, 1, &a});
  const PruningMask m = compute_mask(net, parse_prune_method("GUl1", 0.5));
  const LossEval full = evaluate_losses(net, batch, {});
  const LossEval pruned = evaluate_losses(apply_mask(net, m), batch, {});
  EXPECT_NEAR(r.total, 0.5 * (full.weighted + pruned.weighted), 1e-12);
}

TEST(CactusLoss, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const Network net = testing::random_network(testing::random_mlp(rng, 2, 2, 120), 5);
  const Batch batch = two_blobs(4, 0.1, 5);
  const CompressionSet set = fixed_prune_set(parse_prune_method("GUl1"), {0.3});
  const StepParams step = mid_ramp(0.05);
  Rng a(5);
  const Selections sel = prepare_selections(net, set, batch, step, {0, 1, &a});
  const CactusReport r = evaluate_cactus(net, set, sel, batch, step, BnPolicy::Eval, true);
  const auto numeric = testing::finite_difference(
      [&](const std::vector<double>& theta) {
        Network copy = net;
        copy.set_flat_params(theta);
        return evaluate_cactus(copy, set, sel, batch, step, BnPolicy::Eval, false).total;
      },
      net.flat_params());
  const auto check = testing::compare_gradients(r.gradient, numeric);
  EXPECT_TRUE(check.ok) << check.worst;
}

TEST(Refresh, MaskFollowsCurrentWeights) {
  Network net = Network::build({{2}, {DenseSpec{2, 2, false}}}, 0);
  net.set_flat_params(std::vector<double>{0.1, 0.2, 0.3, 0.4});
  const CompressionSet set = fixed_prune_set(parse_prune_method("GUl1"), {0.25});
  const Batch batch = two_blobs(4, 0.1, 6);
  Rng a(0);
  EXPECT_EQ(prepare_selections(net, set, batch, {}, {0, 1, &a}).elements[1].mask.keep,
            (std::vector<double>{0, 1, 1, 1}));
  net.set_flat_params(std::vector<double>{0.2, 0.1, 0.3, 0.4});
  EXPECT_EQ(prepare_selections(net, set, batch, {}, {0, 1, &a}).elements[1].mask.keep,
            (std::vector<double>{1, 0, 1, 1}));
}

TEST(Refresh, SampledRatiosAreSeededAndInRange) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 7);
  const CompressionSet set = default_cactus_set();
  const Batch batch = two_blobs(4, 0.1, 7);
  Rng a(11), b(11);
  std::vector<double> first, second;
  for (int k = 0; k < 10; ++k) {
    first.push_back(prepare_selections(net, set, batch, {}, {0, 1, &a}).elements[1].ratio);
    second.push_back(prepare_selections(net, set, batch, {}, {0, 1, &b}).elements[1].ratio);
  }
  EXPECT_EQ(first, second);
  for (double r : first) {
    EXPECT_GE(r, 0.25);
    EXPECT_LE(r, 0.75);
  }
  EXPECT_NE(first[0], first[1]);
}

TEST(Refresh, FixedAndProgressiveRatios) {
  const Network net = testing::random_network(resolve_architecture("mlp_blobs"), 8);
  const Batch batch = two_blobs(4, 0.1, 8);
  Rng a(0);
  const CompressionSet fixed = fixed_prune_set(parse_prune_method("GUl1"), {0.5, 0.75});
  for (int k = 0; k < 3; ++k) {
    const Selections s = prepare_selections(net, fixed, batch, {}, {0, 1, &a});
    EXPECT_EQ(s.elements[1].ratio, 0.5);
    EXPECT_EQ(s.elements[2].ratio, 0.75);
  }
  const CompressionSet prog = progressive_prune_set(parse_prune_method("GUl1"), 0.2, 0.8);
  EXPECT_NEAR(prepare_selections(net, prog, batch, {}, {0, 4, &a}).elements[1].ratio, 0.2, 1e-15);
  EXPECT_NEAR(prepare_selections(net, prog, batch, {}, {3, 4, &a}).elements[1].ratio, 0.8, 1e-15);
}

TEST(Refresh, QuantProxyLossNotBelowIdentity) {
  Rng rng(9);
  const Network net = testing::random_network(testing::random_mlp(rng, 2, 2), 9);
  const Batch batch = two_blobs(8, 0.1, 9);
  CompressionSet set = identity_set();
  set.add_quant_proxy({});
  Rng a(1);
  const CactusReport r = cactus_loss(net, set, batch, mid_ramp(0.05), {0, 1, &a});
  EXPECT_GE(r.element_losses[1], r.element_losses[0] - 1e-12);
}

TEST(Train, LinearModelSeparatesBlobs) {
  Network net = Network::build(resolve_architecture("linear_blobs"), 0);
  const Batch data = two_blobs(200, 0.05, 10);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.adam.lr = 5e-2;
  cfg.schedule.warmup_iters = 1000000;  // standard loss only
  const TrainResult res = train(net, data, cfg, identity_set());
  EXPECT_EQ(res.rows.back().lambda, 1.0);
  const auto pred = predict(net, data.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.y[i];
  EXPECT_EQ(correct, data.size());
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.adam.lr = 1e-3;
  cfg.schedule = {5, 10, 0.75};
  cfg.attack.epsilon = 0.05;
  cfg.seed = 12;
  return cfg;
}

TEST(Train, IdenticalSeedsGiveIdenticalRuns) {
  const Batch data = two_blobs(40, 0.1, 11);
  Network a = Network::build(resolve_architecture("mlp_blobs"), 1);
  Network b = Network::build(resolve_architecture("mlp_blobs"), 1);
  const auto ra = train(a, data, small_config(), default_cactus_set());
  const auto rb = train(b, data, small_config(), default_cactus_set());
  ASSERT_EQ(ra.rows.size(), rb.rows.size());
  for (std::size_t i = 0; i < ra.rows.size(); ++i) EXPECT_EQ(format_metrics_row(ra.rows[i]), format_metrics_row(rb.rows[i]));
  EXPECT_EQ(a.flat_params(), b.flat_params());
}

TEST(Train, ResumeContinuesBitIdentically) {
  const Batch data = two_blobs(40, 0.1, 12);
  CompressionSet set = default_cactus_set();
  set.add_quant_proxy({});
  Network full = Network::build(resolve_architecture("mlp_blobs"), 2);
  const auto whole = train(full, data, small_config(), set);

  Network part = Network::build(resolve_architecture("mlp_blobs"), 2);
  TrainConfig first = small_config();
  first.stop_after_epochs = 1;
  Trainer t1(part, data, first, set);
  const auto head = t1.run();
  const Checkpoint ckpt = decode_checkpoint(encode_checkpoint(t1.checkpoint()));

  Network resumed = Network::build(resolve_architecture("mlp_blobs"), 99);
  Trainer t2(resumed, data, small_config(), set);
  t2.resume(ckpt);
  const auto tail = t2.run();
  ASSERT_EQ(head.rows.size() + tail.rows.size(), whole.rows.size());
  for (std::size_t i = 0; i < tail.rows.size(); ++i) {
    EXPECT_EQ(format_metrics_row(tail.rows[i]), format_metrics_row(whole.rows[head.rows.size() + i]));
  }
  EXPECT_EQ(resumed.flat_params(), full.flat_params());
}

TEST(Train, ResumeRejectsOtherArchitecture) {
  const Batch data = two_blobs(8, 0.1, 13);
  Network a = Network::build(resolve_architecture("mlp_blobs"), 0);
  Trainer t(a, data, small_config(), identity_set());
  Network other = Network::build(resolve_architecture("linear_blobs"), 0);
  Trainer u(other, data, small_config(), identity_set());
  EXPECT_THROW(u.resume(t.checkpoint()), ConfigError);
}

TEST(Train, DivergenceIsReported) {
  const Batch data = two_blobs(16, 0.1, 14);
  Network net = Network::build(resolve_architecture("mlp_blobs"), 0);
  std::vector<double> huge(net.num_params(), 1e300);
  net.set_flat_params(huge);
  EXPECT_THROW(train(net, data, small_config(), identity_set()), NumericError);
}

TEST(Metrics, HeaderNamesElements) {
  CompressionSet set = default_cactus_set();
  set.add_quant_proxy({});
  EXPECT_EQ(metrics_header(set),
            "iter,epoch,lambda,eps,loss_total,loss_std,loss_cert,elem0_identity,elem1_prune,elem2_quant,train_acc");
  MetricsRow row{3, 1, 0.5, 0.1, 1.0, 2.0, 0.25, {0.125}, 0.75};
  EXPECT_EQ(format_metrics_row(row), "3,1,0.5,0.10000000000000001,1,2,0.25,0.125,0.75");
}

TEST(TrainState, EncodingRoundTrips) {
  TrainState s{42, 3, {{0.1, -0.2}, {0.01, 0.02}, 7}};
  const TrainState back = decode_train_state(encode_train_state(s));
  EXPECT_EQ(back.iteration, 42u);
  EXPECT_EQ(back.epochs_done, 3u);
  EXPECT_EQ(back.adam.m, s.adam.m);
  EXPECT_EQ(back.adam.v, s.adam.v);
  EXPECT_EQ(back.adam.step, 7u);
}

}  // namespace
}  // namespace cactus
