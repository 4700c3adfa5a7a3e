#pragma once

#include <span>
#include <vector>

#include "cactus/bounds.hpp"
#include "cactus/network.hpp"
#include "cactus/rng.hpp"

namespace cactus {

struct AttackConfig {
  double epsilon = 0.0;
  double tau = 0.0;
  int pgd_steps = 8;
  /// Step size as a fraction of the attack radius.
  double pgd_step_size = 0.25;
  int restarts = 1;

  /// Throws ConfigError on tau outside [0, epsilon] or non-positive counts.
  void validate() const;
};

enum class PgdObjective {
  CrossEntropy,
  IbpBox,  ///< IBP loss of the tau-box around the iterate
};

struct PgdOptions {
  int steps = 8;
  double step_size = 0.25;
  int restarts = 1;
  PgdObjective objective = PgdObjective::CrossEntropy;
  double tau = 0.0;
  ForwardOptions forward;
};

/// Signed-gradient ascent inside B(x, radius) ∩ [0,1], starting from a uniform
/// random point; per sample, the iterate with the highest loss over all steps
/// and restarts is returned.
Tensor pgd_attack(const NetworkView& view, const Tensor& x, std::span<const int> labels, double radius,
                  const PgdOptions& options, Rng& rng);

/// SABR box centers: PGD in B(x, eps - tau) on the tau-box IBP loss,
/// clamped to [x - eps + tau, x + eps - tau].
Tensor sabr_centers(const NetworkView& view, const Batch& batch, const AttackConfig& cfg, Rng& rng,
                    const ForwardOptions& forward = {});

/// Per-sample IBP loss of the tau-boxes around the given centers, clipped to [0,1].
Var sabr_loss(const Network& net, const BoundParams& params, const Tensor& centers, std::span<const int> labels,
              double tau, const ForwardOptions& options = {});

/// Value of the SABR loss (mean over the batch) for evaluation.
double sabr_loss_value(const NetworkView& view, const Batch& batch, const AttackConfig& cfg, Rng& rng);

struct AwpConfig {
  double eta = 0.25;
  int steps = 1;
  /// Parameter roles left unperturbed. BN running statistics are never part of theta.
  std::vector<ParamRole> excluded;
};

struct WeightPerturbation {
  std::vector<double> delta;
};

enum class BnPolicy {
  Eval,   ///< running statistics everywhere
  Train,  ///< clean pass on batch statistics; bounds reuse them frozen
};

struct LossRequest {
  /// SABR box centers; null means point boxes at x, where L_cert equals L_std.
  const Tensor* centers = nullptr;
  double tau = 0.0;
  double std_weight = 1.0;
  double cert_weight = 0.0;
  BnPolicy bn = BnPolicy::Eval;
  bool with_gradient = true;
};

struct LossEval {
  /// Batch means.
  double std_loss = 0.0;
  double cert_loss = 0.0;
  double weighted = 0.0;
  /// d(weighted)/d(theta) in flat order; empty unless requested.
  std::vector<double> gradient;
  std::size_t correct = 0;
  /// Batch statistics of the clean pass under BnPolicy::Train.
  BnFrame frame;
};

/// Clean cross-entropy and SABR terms of one network variant on one batch,
/// with selections (centers, mask, offset) held fixed.
LossEval evaluate_losses(const NetworkView& view, const Batch& batch, const LossRequest& request);

/// k-step signed ascent on L_std + L_cert over ||delta||_inf <= eta (step
/// eta/k), with the SABR centers held fixed. Falls back to zero when the
/// lambda-weighted loss at theta + delta is below the loss at theta. The view
/// must not carry an offset already.
WeightPerturbation awp_perturb(const NetworkView& view, const Batch& batch, LossRequest request,
                               double lambda, const AwpConfig& cfg);

/// lambda * L_std + (1 - lambda) * L_cert at theta + delta with gradient w.r.t. theta.
LossEval awp_loss(const NetworkView& view, const Batch& batch, LossRequest request, double lambda,
                  const AwpConfig& cfg);

}  // namespace cactus
