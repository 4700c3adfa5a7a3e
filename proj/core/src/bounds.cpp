#include "cactus/bounds.hpp"

#include <cmath>
#include <string>

#include "cactus/error.hpp"
#include "cactus/ops.hpp"

namespace cactus {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

IntervalVar from_bounds(Var lower, Var upper) {
  return {scale(add(lower, upper), 0.5), scale(sub(upper, lower), 0.5)};
}

}  // namespace

Var IntervalVar::lower() const { return sub(center, radius); }
Var IntervalVar::upper() const { return add(center, radius); }

IntervalVar input_box(Var x, double radius) {
  if (!(radius >= 0.0)) throw Error("input box radius must be non-negative, got " + std::to_string(radius));
  const Var lo = clamp(add_scalar(x, -radius), 0.0, 1.0);
  const Var hi = clamp(add_scalar(x, radius), 0.0, 1.0);
  return from_bounds(lo, hi);
}

Interval make_box(const Tensor& x, double radius) {
  if (!(radius >= 0.0)) throw Error("input box radius must be non-negative, got " + std::to_string(radius));
  Interval box{x, x};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    box.lower[i] = std::max(x[i] - radius, 0.0);
    box.upper[i] = std::min(x[i] + radius, 1.0);
  }
  return box;
}

IntervalVar ibp_forward(const Network& net, const BoundParams& params, const IntervalVar& input,
                        const ForwardOptions& options) {
  if (options.bn == BnMode::BatchStats) {
    throw Error("ibp_forward: BatchNorm must use running or frozen statistics");
  }
  check_input(net, input.center.shape());
  if (input.radius.shape() != input.center.shape()) {
    throw ShapeError("ibp_forward: center " + shape_str(input.center.shape()) + " vs radius " +
                     shape_str(input.radius.shape()));
  }
  Tape& tape = *input.center.tape();
  const std::size_t batch = input.center.shape()[0];
  Var c = input.center;
  Var r = input.radius;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    auto value_of = [&](ParamRole role) -> std::optional<Var> {
      const auto idx = net.find_param(i, role);
      if (!idx) return std::nullopt;
      return params.values[*idx];
    };
    std::visit(Overloaded{
                   [&](const DenseSpec&) {
                     const Var w = *value_of(ParamRole::Weight);
                     c = linear(c, w, value_of(ParamRole::Bias));
                     r = linear(r, abs_value(w), std::nullopt);
                   },
                   [&](const Conv2dSpec& spec) {
                     const Var w = *value_of(ParamRole::Weight);
                     const Conv2dGeometry geo{spec.stride, spec.padding};
                     c = conv2d(c, w, value_of(ParamRole::Bias), geo);
                     r = conv2d(r, abs_value(w), std::nullopt, geo);
                   },
                   [&](const ReluSpec&) {
                     const IntervalVar out = from_bounds(relu(sub(c, r)), relu(add(c, r)));
                     c = out.center;
                     r = out.radius;
                   },
                   [&](const FlattenSpec&) {
                     const Shape flat{batch, shape_numel(net.activation_shapes()[i])};
                     c = reshape(c, flat);
                     r = reshape(r, flat);
                   },
                   [&](const BatchNormSpec&) {
                     auto [s, t] = batch_norm_affine(tape, net, params, i, options);
                     c = channel_affine(c, s, t);
                     r = channel_affine(r, abs_value(s), std::nullopt);
                   },
               },
               net.layers()[i]);
  }
  return {c, r};
}

Interval ibp_bounds(const NetworkView& view, const Interval& input) {
  Tape tape;
  const BoundParams params = bind_params(tape, view, false);
  const Var lo = tape.constant(input.lower);
  const Var hi = tape.constant(input.upper);
  for (std::size_t i = 0; i < input.lower.numel(); ++i) {
    if (input.lower[i] > input.upper[i]) throw Error("ibp_bounds: lower exceeds upper at element " + std::to_string(i));
  }
  const IntervalVar out = ibp_forward(view.net(), params, from_bounds(lo, hi));
  return {out.lower().value(), out.upper().value()};
}

Var ibp_loss(const IntervalVar& logits, std::span<const int> labels) {
  return softmax_cross_entropy(select_by_label(logits.lower(), logits.upper(), labels), labels);
}

Verdict certify_bounds(std::span<const double> lower, std::span<const double> upper, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= lower.size()) {
    throw Error("certify: label " + std::to_string(label) + " out of range for " + std::to_string(lower.size()) +
                " classes");
  }
  const double ly = lower[static_cast<std::size_t>(label)];
  for (std::size_t i = 0; i < upper.size(); ++i) {
    if (static_cast<int>(i) != label && !(ly > upper[i])) return Verdict::Unknown;
  }
  return Verdict::Certified;
}

std::vector<Verdict> certify(const NetworkView& view, const Tensor& x, std::span<const int> labels,
                             double epsilon) {
  const Interval out = ibp_bounds(view, make_box(x, epsilon));
  const std::size_t batch = x.dim(0);
  if (labels.size() != batch) {
    throw ShapeError("certify: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(batch));
  }
  const std::size_t k = out.lower.row_size();
  std::vector<Verdict> verdicts(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    verdicts[b] = certify_bounds(out.lower.data().subspan(b * k, k), out.upper.data().subspan(b * k, k), labels[b]);
  }
  return verdicts;
}

}  // namespace cactus
