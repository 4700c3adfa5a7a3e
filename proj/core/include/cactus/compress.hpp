#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cactus/network.hpp"
#include "cactus/tape.hpp"

namespace cactus {

enum class PruneScope { Global, Local };
enum class PruneStructure { Unstructured, StructuredChannel };
enum class PruneScore { L1, L2, GradMag };

struct PruneSpec {
  double ratio = 0.0;
  PruneScope scope = PruneScope::Global;
  PruneStructure structure = PruneStructure::Unstructured;
  PruneScore score = PruneScore::L1;
  std::vector<ParamRole> roles{ParamRole::Weight};

  void validate() const;
};

/// Method codes: {G,L}{U,S}{l1,l2,g}, e.g. "GUl1", "GSl2", "LUl1", "LSg".
PruneSpec parse_prune_method(std::string_view code, double ratio = 0.0);
std::string prune_method_code(const PruneSpec& spec);

struct PruningMask {
  /// 1 keeps, 0 prunes; aligned with flat theta.
  std::vector<double> keep;
  std::size_t target_count = 0;
  std::size_t pruned_count = 0;

  double sparsity() const;
};

/// Rank-based mask: exactly floor(ratio * d) target scalars (or the nearest
/// number of output channels) with the lowest scores are pruned; equal scores
/// prune the lower ParamId first. Structured pruning leaves the final
/// classifier layer intact and throws if a layer would lose every channel.
/// GradMag needs `grads` aligned with flat theta.
PruningMask compute_mask(const Network& net, const PruneSpec& spec, std::span<const double> grads = {});

NetworkView apply_mask(const Network& net, const PruningMask& mask);

/// Copy of the network with parameters (theta + offset) * mask written out.
Network materialize(const NetworkView& view);

std::vector<std::uint8_t> encode_mask(const PruningMask& mask);
PruningMask decode_mask(std::span<const std::uint8_t> bytes);

// Affine uniform quantizer: Q(w) = clamp(round((w - z) / s), q_min, q_max) * s + z
// with rounding half away from zero.
struct QuantSpec {
  int bits = 8;
  double scale = 1.0;
  double zero_point = 0.0;
  std::int64_t q_min = -128;
  std::int64_t q_max = 127;

  double q_step() const { return scale; }
  double range_lo() const { return static_cast<double>(q_min) * scale + zero_point; }
  double range_hi() const { return static_cast<double>(q_max) * scale + zero_point; }

  /// Plain grid q_step * round(w / q_step) with an effectively unbounded range.
  static QuantSpec grid(double q_step);
};

double quantize_value(double w, const QuantSpec& spec);

/// s = (max - min) / (q_max - q_min), z = min - q_min * s, so min maps to q_min
/// and max to q_max. Constant input falls back to s = 1, z = that constant.
QuantSpec calibrate_quant(std::span<const double> weights, int bits);

enum class QuantGranularity {
  PerLayer,   ///< one spec over each layer's weight and bias
  PerTensor,  ///< one spec per parameter tensor
};

struct QuantEntry {
  /// Index into Network::params().
  std::vector<std::size_t> tensors;
  QuantSpec spec;
};

struct QuantPlan {
  QuantGranularity granularity = QuantGranularity::PerLayer;
  std::vector<QuantEntry> entries;
};

/// Calibrates specs over Dense/Conv weights and biases; BN parameters and
/// running statistics are left in full precision.
QuantPlan calibrate_network(const Network& net, int bits, QuantGranularity granularity);
Network quantize_weights(const Network& net, const QuantPlan& plan);
Network quantize_weights(const Network& net, int bits, QuantGranularity granularity = QuantGranularity::PerLayer);
/// Applies one spec to every weight and bias.
Network quantize_weights(const Network& net, const QuantSpec& spec);

/// Forward Q(w); backward passes the gradient where q_min <= (w - z)/s <= q_max.
Var ste_quantize(Var w, const QuantSpec& spec);

std::vector<std::uint8_t> encode_quant_plan(const QuantPlan& plan);
QuantPlan decode_quant_plan(std::span<const std::uint8_t> bytes);

}  // namespace cactus
