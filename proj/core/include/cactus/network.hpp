#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cactus/ops.hpp"
#include "cactus/tape.hpp"
#include "cactus/tensor.hpp"

namespace cactus {

struct DenseSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  bool has_bias = true;
  bool operator==(const DenseSpec&) const = default;
};

struct Conv2dSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bias = true;
  bool operator==(const Conv2dSpec&) const = default;
};

struct ReluSpec {
  bool operator==(const ReluSpec&) const = default;
};

struct FlattenSpec {
  bool operator==(const FlattenSpec&) const = default;
};

/// Affine batch normalisation over axis 1 with running mean/variance.
struct BatchNormSpec {
  std::size_t features = 0;
  bool operator==(const BatchNormSpec&) const = default;
};

using LayerSpec = std::variant<DenseSpec, Conv2dSpec, ReluSpec, FlattenSpec, BatchNormSpec>;

/// Per-sample input shape plus the ordered layer list.
struct Architecture {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  bool operator==(const Architecture&) const = default;
};

// Text form, one layer per ';'-separated clause:
//   in 1x28x28; flatten; dense 784 128; relu; conv 1 16 3 s1 p1 nobias; bn 16
std::string format_architecture(const Architecture& arch);
Architecture parse_architecture(std::string_view text);

/// Named presets: mlp_mnist, mlp_blobs, linear_blobs, conv_small, cnn7_mnist,
/// cnn7_cifar. Any other string is parsed as an architecture text.
Architecture resolve_architecture(std::string_view name_or_text);

enum class ParamRole : std::uint8_t { Weight = 0, Bias = 1, BnGamma = 2, BnBeta = 3 };
std::string_view role_name(ParamRole role);

/// Address of one scalar of θ.
struct ParamId {
  std::size_t layer = 0;
  ParamRole role = ParamRole::Weight;
  std::size_t offset = 0;
  auto operator<=>(const ParamId&) const = default;
};

struct ParamTensor {
  std::size_t layer = 0;
  ParamRole role = ParamRole::Weight;
  Tensor value;
  /// Position of value[0] in the flat parameter vector.
  std::size_t flat_offset = 0;
};

struct BnStats {
  Tensor mean;
  Tensor var;
  bool operator==(const BnStats&) const = default;
};

enum class Mode { Train, Eval };

// Layer list plus parameter store θ. Parameters are kept per tensor in layer
// order (weight, bias, gamma, beta); the flat θ is their concatenation.
class Network {
 public:
  static constexpr double kBnMomentum = 0.1;
  static constexpr double kBnEps = 1e-5;

  /// Validates the chain and initialises weights Kaiming-uniform (fan-in),
  /// biases 0, BN gamma 1 / beta 0, running mean 0 / variance 1.
  static Network build(Architecture arch, std::uint64_t seed);
  /// Rebuilds from stored parts (checkpoint loading).
  static Network from_parts(Architecture arch, std::span<const double> flat_params,
                            std::vector<BnStats> bn_stats);

  const Architecture& architecture() const { return arch_; }
  const std::vector<LayerSpec>& layers() const { return arch_.layers; }
  const Shape& input_shape() const { return arch_.input_shape; }
  /// Per-sample shape after each layer.
  const std::vector<Shape>& activation_shapes() const { return shapes_; }
  const Shape& output_shape() const { return shapes_.back(); }
  std::size_t num_classes() const;

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }
  std::size_t num_params() const { return num_params_; }
  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> values);

  ParamId param_id(std::size_t flat_index) const;
  std::size_t flat_index(const ParamId& id) const;
  /// Index into params() of the (layer, role) tensor.
  std::optional<std::size_t> find_param(std::size_t layer, ParamRole role) const;

  std::vector<BnStats>& bn_stats() { return bn_stats_; }
  const std::vector<BnStats>& bn_stats() const { return bn_stats_; }
  /// Index into bn_stats() for a BatchNorm layer.
  std::optional<std::size_t> bn_slot(std::size_t layer) const;

  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

 private:
  Network() = default;
  void layout_params();

  Architecture arch_;
  std::vector<Shape> shapes_;
  std::vector<ParamTensor> params_;
  std::size_t num_params_ = 0;
  std::vector<BnStats> bn_stats_;
  std::vector<std::optional<std::size_t>> bn_slots_;
  Mode mode_ = Mode::Eval;
};

/// Per-sample output shapes of each layer; throws naming the first
/// incompatible pair.
std::vector<Shape> infer_shapes(const Architecture& arch);

// A network seen through an optional elementwise multiplier (a pruning mask ψ)
// and an optional additive offset (a weight perturbation Δ) on θ:
// effective parameters are (θ + Δ) ⊙ ψ. Gradients are taken with respect to θ.
class NetworkView {
 public:
  NetworkView(const Network& net)  // NOLINT(google-explicit-constructor)
      : net_(&net) {}
  NetworkView(const Network& net, std::span<const double> mask, std::span<const double> offset = {});

  const Network& net() const { return *net_; }
  std::span<const double> mask() const { return mask_; }
  std::span<const double> offset() const { return offset_; }

  NetworkView with_offset(std::span<const double> offset) const;

 private:
  const Network* net_;
  std::span<const double> mask_;
  std::span<const double> offset_;
};

/// Parameters placed on a tape: `leaves` are the θ leaves, `values` the
/// effective tensors the layers consume.
struct BoundParams {
  std::vector<Var> leaves;
  std::vector<Var> values;
};

BoundParams bind_params(Tape& tape, const NetworkView& view, bool requires_grad);
/// Concatenates leaf gradients in flat θ order.
std::vector<double> flat_gradient(const Gradients& grads, const BoundParams& params);

enum class BnMode {
  Running,     ///< running statistics (evaluation)
  BatchStats,  ///< statistics of this batch, recorded into the frame
  Frozen,      ///< statistics previously recorded into the frame
};

struct BnFrame {
  std::vector<BnStats> stats;
};

struct ForwardOptions {
  BnMode bn = BnMode::Running;
  BnFrame* frame = nullptr;
};

/// Logits [B, classes] for a batch x [B, input_shape...].
Var forward(const Network& net, const BoundParams& params, Var x, const ForwardOptions& options = {});
/// Evaluation-mode logits without gradient tracking.
Tensor forward(const NetworkView& view, const Tensor& x);

/// Argmax over logits; ties break to the lowest index.
int argmax(std::span<const double> logits);
std::vector<int> predict(const NetworkView& view, const Tensor& x);

/// Exponential moving update of running statistics from a recorded frame.
void update_running_stats(Network& net, const BnFrame& frame);

/// Per-channel (scale, shift) of a BatchNorm layer under the given options.
std::pair<Var, Var> batch_norm_affine(Tape& tape, const Network& net, const BoundParams& params,
                                      std::size_t layer, const ForwardOptions& options);

/// Inputs x [B, input_shape...] in [0,1] with labels y.
struct Batch {
  Tensor x;
  std::vector<int> y;
  std::size_t size() const { return y.size(); }
};

/// Validates that x is a batch of the network's inputs.
void check_input(const Network& net, const Shape& batch_shape);

}  // namespace cactus
