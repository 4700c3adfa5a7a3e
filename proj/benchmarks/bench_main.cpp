#include <benchmark/benchmark.h>

#include "cactus/attack.hpp"
#include "cactus/bounds.hpp"
#include "cactus/compress.hpp"
#include "cactus/network.hpp"
#include "cactus/train.hpp"

using namespace cactus;

namespace {

Tensor random_batch(Rng& rng, const Shape& sample, std::size_t n) {
  Shape shape{n};
  shape.insert(shape.end(), sample.begin(), sample.end());
  Tensor x(shape);
  for (double& v : x.data()) v = uniform01(rng);
  return x;
}

Batch mnist_batch(std::size_t n) {
  Rng rng(1);
  Batch b{random_batch(rng, {1, 28, 28}, n), std::vector<int>(n)};
  for (int& y : b.y) y = static_cast<int>(uniform_index(rng, 10));
  return b;
}

void BM_Forward(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  const Batch b = mnist_batch(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward(NetworkView(net), b.x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(128);

void BM_IbpBounds(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  const Batch b = mnist_batch(static_cast<std::size_t>(state.range(0)));
  const Interval box = make_box(b.x, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(ibp_bounds(net, box));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_IbpBounds)->Arg(16)->Arg(128);

void BM_SabrCenters(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  const Batch b = mnist_batch(16);
  AttackConfig cfg{0.1, 0.04};
  cfg.pgd_steps = static_cast<int>(state.range(0));
  Rng rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(sabr_centers(net, b, cfg, rng));
}
BENCHMARK(BM_SabrCenters)->Arg(1)->Arg(8);

void BM_CactusStep(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  const Batch b = mnist_batch(16);
  const CompressionSet set = sampled_prune_set(parse_prune_method("GUl1"), 0.25, 0.75);
  StepParams step;
  step.lambda = 0.75;
  step.attack = {0.1, 0.04};
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(cactus_loss(net, set, b, step, {0, 1, &rng}));
}
BENCHMARK(BM_CactusStep);

void BM_ComputeMask(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  const PruneSpec spec = parse_prune_method(state.range(0) ? "LUl1" : "GUl1", 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(compute_mask(net, spec));
  state.SetLabel(prune_method_code(spec));
}
BENCHMARK(BM_ComputeMask)->Arg(0)->Arg(1);

void BM_Quantize(benchmark::State& state) {
  const Network net = Network::build(resolve_architecture("mlp_mnist"), 0);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_weights(net, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Quantize)->Arg(4)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
