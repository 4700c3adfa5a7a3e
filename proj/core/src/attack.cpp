#include "cactus/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cactus/error.hpp"
#include "cactus/ops.hpp"

namespace cactus {
namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Per-sample objective values and d(sum)/dx at the given inputs.
std::pair<Tensor, Tensor> objective_and_grad(const NetworkView& view, const Tensor& x, std::span<const int> labels,
                                             const PgdOptions& options) {
  Tape tape;
  const BoundParams params = bind_params(tape, view, false);
  const Var xv = tape.leaf(x, true);
  Var per_sample;
  if (options.objective == PgdObjective::IbpBox) {
    per_sample = ibp_loss(ibp_forward(view.net(), params, input_box(xv, options.tau), options.forward), labels);
  } else {
    per_sample = softmax_cross_entropy(forward(view.net(), params, xv, options.forward), labels);
  }
  const Gradients grads = tape.backward(sum(per_sample));
  return {per_sample.value(), grads[xv]};
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ConfigError("attack epsilon must be >= 0, got " + std::to_string(epsilon));
  if (!(tau >= 0.0) || tau > epsilon) {
    throw ConfigError("attack tau must lie in [0, epsilon], got tau=" + std::to_string(tau) +
                      " epsilon=" + std::to_string(epsilon));
  }
  if (pgd_steps < 1) throw ConfigError("pgd_steps must be >= 1");
  if (!(pgd_step_size > 0.0)) throw ConfigError("pgd_step_size must be > 0");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
}

Tensor pgd_attack(const NetworkView& view, const Tensor& x, std::span<const int> labels, double radius,
                  const PgdOptions& options, Rng& rng) {
  if (!(radius >= 0.0)) throw Error("pgd_attack: negative radius");
  if (options.forward.bn == BnMode::BatchStats) {
    throw Error("pgd_attack: BatchNorm must use running or frozen statistics");
  }
  if (radius == 0.0) return x;
  const std::size_t n = x.numel();
  const std::size_t batch = x.dim(0);
  const std::size_t row = x.row_size();
  Tensor lo = x, hi = x;
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = std::max(x[i] - radius, 0.0);
    hi[i] = std::min(x[i] + radius, 1.0);
  }
  const double alpha = options.step_size * radius;

  Tensor best = x;
  std::vector<double> best_loss(batch, -std::numeric_limits<double>::infinity());
  auto keep_best = [&](const Tensor& cur, const Tensor& losses) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (losses[b] > best_loss[b]) {
        best_loss[b] = losses[b];
        std::copy_n(cur.data().begin() + static_cast<std::ptrdiff_t>(b * row), row,
                    best.data().begin() + static_cast<std::ptrdiff_t>(b * row));
      }
    }
  };

  for (int restart = 0; restart < options.restarts; ++restart) {
    Tensor cur = x;
    for (std::size_t i = 0; i < n; ++i) cur[i] = std::clamp(x[i] + uniform(rng, -radius, radius), lo[i], hi[i]);
    for (int step = 0; step < options.steps; ++step) {
      auto [losses, grad] = objective_and_grad(view, cur, labels, options);
      keep_best(cur, losses);
      for (std::size_t i = 0; i < n; ++i) cur[i] = std::clamp(cur[i] + alpha * sign(grad[i]), lo[i], hi[i]);
    }
    keep_best(cur, objective_and_grad(view, cur, labels, options).first);
  }
  return best;
}

Tensor sabr_centers(const NetworkView& view, const Batch& batch, const AttackConfig& cfg, Rng& rng,
                    const ForwardOptions& forward) {
  cfg.validate();
  const double radius = cfg.epsilon - cfg.tau;
  if (radius <= 0.0) return batch.x;
  PgdOptions options;
  options.steps = cfg.pgd_steps;
  options.step_size = cfg.pgd_step_size;
  options.restarts = cfg.restarts;
  options.objective = PgdObjective::IbpBox;
  options.tau = cfg.tau;
  options.forward = forward;
  Tensor centers = pgd_attack(view, batch.x, batch.y, radius, options, rng);
  for (std::size_t i = 0; i < centers.numel(); ++i) {
    centers[i] = std::clamp(centers[i], batch.x[i] - radius, batch.x[i] + radius);
  }
  return centers;
}

Var sabr_loss(const Network& net, const BoundParams& params, const Tensor& centers, std::span<const int> labels,
              double tau, const ForwardOptions& options) {
  Tape& tape = *params.leaves.front().tape();
  return ibp_loss(ibp_forward(net, params, input_box(tape.constant(centers), tau), options), labels);
}

double sabr_loss_value(const NetworkView& view, const Batch& batch, const AttackConfig& cfg, Rng& rng) {
  const Tensor centers = sabr_centers(view, batch, cfg, rng);
  LossRequest request;
  request.centers = &centers;
  request.tau = cfg.tau;
  request.with_gradient = false;
  return evaluate_losses(view, batch, request).cert_loss;
}

LossEval evaluate_losses(const NetworkView& view, const Batch& batch, const LossRequest& request) {
  const Network& net = view.net();
  Tape tape;
  const BoundParams params = bind_params(tape, view, request.with_gradient);
  const Var x = tape.constant(batch.x);

  LossEval out;
  ForwardOptions clean;
  if (request.bn == BnPolicy::Train) {
    clean.bn = BnMode::BatchStats;
    clean.frame = &out.frame;
  }
  const Var logits = forward(net, params, x, clean);
  const Var ce = mean(softmax_cross_entropy(logits, batch.y));
  Var cert = ce;
  if (request.centers) {
    ForwardOptions frozen;
    if (request.bn == BnPolicy::Train) {
      frozen.bn = BnMode::Frozen;
      frozen.frame = &out.frame;
    }
    cert = mean(sabr_loss(net, params, *request.centers, batch.y, request.tau, frozen));
  }
  const Var total = add(scale(ce, request.std_weight), scale(cert, request.cert_weight));

  out.std_loss = ce.value().item();
  out.cert_loss = cert.value().item();
  out.weighted = total.value().item();
  const std::size_t k = logits.shape()[1];
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (argmax(logits.value().data().subspan(b * k, k)) == batch.y[b]) ++out.correct;
  }
  if (request.with_gradient) out.gradient = flat_gradient(tape.backward(total), params);
  return out;
}

namespace {

struct AwpResult {
  WeightPerturbation perturbation;
  LossEval at_choice;
};

AwpResult awp_search(const NetworkView& view, const Batch& batch, LossRequest request, double lambda,
                     const AwpConfig& cfg, bool final_gradient) {
  if (!view.offset().empty()) throw Error("awp: view already carries a weight offset");
  if (!(cfg.eta >= 0.0)) throw ConfigError("awp eta must be >= 0");
  if (cfg.steps < 1) throw ConfigError("awp steps must be >= 1");
  const Network& net = view.net();
  const std::size_t n = net.num_params();

  LossRequest weighted = request;
  weighted.std_weight = lambda;
  weighted.cert_weight = 1.0 - lambda;
  weighted.with_gradient = final_gradient;

  AwpResult result{{std::vector<double>(n, 0.0)}, {}};
  if (cfg.eta == 0.0) {
    result.at_choice = evaluate_losses(view, batch, weighted);
    return result;
  }

  std::vector<bool> frozen(n, false);
  for (const ParamTensor& p : net.params()) {
    if (std::find(cfg.excluded.begin(), cfg.excluded.end(), p.role) != cfg.excluded.end()) {
      std::fill_n(frozen.begin() + static_cast<std::ptrdiff_t>(p.flat_offset), p.value.numel(), true);
    }
  }

  LossRequest ascent = request;
  ascent.std_weight = 1.0;
  ascent.cert_weight = 1.0;
  ascent.with_gradient = true;
  const LossEval base = evaluate_losses(view, batch, ascent);
  const double base_weighted = lambda * base.std_loss + (1.0 - lambda) * base.cert_loss;

  std::vector<double>& delta = result.perturbation.delta;
  const double step = cfg.eta / cfg.steps;
  std::vector<double> grad = base.gradient;
  for (int k = 0; k < cfg.steps; ++k) {
    if (k > 0) grad = evaluate_losses(view.with_offset(delta), batch, ascent).gradient;
    for (std::size_t i = 0; i < n; ++i) {
      delta[i] = frozen[i] ? 0.0 : std::clamp(delta[i] + step * sign(grad[i]), -cfg.eta, cfg.eta);
    }
  }

  result.at_choice = evaluate_losses(view.with_offset(delta), batch, weighted);
  if (result.at_choice.weighted < base_weighted) {
    std::fill(delta.begin(), delta.end(), 0.0);
    result.at_choice = evaluate_losses(view, batch, weighted);
  }
  return result;
}

}  // namespace

WeightPerturbation awp_perturb(const NetworkView& view, const Batch& batch, LossRequest request, double lambda,
                               const AwpConfig& cfg) {
  return awp_search(view, batch, request, lambda, cfg, false).perturbation;
}

LossEval awp_loss(const NetworkView& view, const Batch& batch, LossRequest request, double lambda,
                  const AwpConfig& cfg) {
  return awp_search(view, batch, request, lambda, cfg, true).at_choice;
}

}  // namespace cactus
