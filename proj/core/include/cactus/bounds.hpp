#pragma once

#include <span>
#include <vector>

#include "cactus/network.hpp"
#include "cactus/tape.hpp"

namespace cactus {

// Interval on the tape kept as center/radius; lower = c - r, upper = c + r.
struct IntervalVar {
  Var center;
  Var radius;

  Var lower() const;
  Var upper() const;
};

/// Plain bounds, lower <= upper elementwise.
struct Interval {
  Tensor lower;
  Tensor upper;
};

/// [max(x - radius, 0), min(x + radius, 1)] for each element, differentiable in x.
IntervalVar input_box(Var x, double radius);
/// Value-level version of input_box.
Interval make_box(const Tensor& x, double radius);

/// Output bounds of the network over the input interval. BatchNorm layers act
/// as fixed affine maps (running statistics, or the frame's under Frozen);
/// BatchStats is rejected.
IntervalVar ibp_forward(const Network& net, const BoundParams& params, const IntervalVar& input,
                        const ForwardOptions& options = {});
/// Evaluation-mode bounds without gradient tracking.
Interval ibp_bounds(const NetworkView& view, const Interval& input);

/// Per-sample ln(1 + sum_{i != y} exp(upper_i - lower_y)), shape [B].
Var ibp_loss(const IntervalVar& logits, std::span<const int> labels);

enum class Verdict { Certified, Unknown };

/// Certified iff lower_y > upper_i for every i != y over the eps-box.
std::vector<Verdict> certify(const NetworkView& view, const Tensor& x, std::span<const int> labels,
                             double epsilon);
Verdict certify_bounds(std::span<const double> lower, std::span<const double> upper, int label);

}  // namespace cactus
