#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cactus/attack.hpp"
#include "cactus/checkpoint.hpp"
#include "cactus/compress.hpp"
#include "cactus/network.hpp"
#include "cactus/rng.hpp"

namespace cactus {

/// How a Prune element picks its ratio at each refresh.
struct RatioSampler {
  enum class Kind {
    Fixed,        ///< always `lo`
    Uniform,      ///< U[lo, hi] per batch
    Choice,       ///< uniform over `choices` per batch
    Progressive,  ///< linear from lo (first epoch) to hi (last epoch)
  };
  Kind kind = Kind::Fixed;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> choices;
};

struct IdentityElement {};
struct PruneElement {
  PruneSpec spec;
  RatioSampler ratio;
};
struct QuantProxyElement {
  AwpConfig awp;
};

using CompressionElement = std::variant<IdentityElement, PruneElement, QuantProxyElement>;

std::string element_kind(const CompressionElement& element);

enum class SetStrategy { Fixed, Sampled, Progressive };

// Ordered members of C(f_theta); element 0 is always the full network.
struct CompressionSet {
  SetStrategy strategy = SetStrategy::Fixed;
  std::vector<CompressionElement> elements{IdentityElement{}};

  void validate() const;
  CompressionSet& add_quant_proxy(const AwpConfig& awp);
};

CompressionSet identity_set();
/// {Identity} plus `count` Prune elements each drawing ratio ~ U[lo, hi].
CompressionSet sampled_prune_set(const PruneSpec& method, double lo, double hi, std::size_t count = 1);
/// {Identity} plus one Prune element per fixed ratio.
CompressionSet fixed_prune_set(const PruneSpec& method, const std::vector<double>& ratios);
/// {Identity} plus one Prune element whose ratio grows linearly over epochs.
CompressionSet progressive_prune_set(const PruneSpec& method, double from, double to);
/// Default CACTUS pruning set: Identity and GUl1 with ratio ~ U[0.25, 0.75].
CompressionSet default_cactus_set();

struct ElementSelection {
  double ratio = 0.0;
  PruningMask mask;
  /// SABR centers; absent when the certified radius is 0.
  std::optional<Tensor> centers;
  WeightPerturbation delta;
};

// Everything chosen by search or sampling for one batch. Held fixed while the
// loss is differentiated.
struct Selections {
  std::vector<ElementSelection> elements;
};

struct RefreshContext {
  std::size_t epoch = 0;
  std::size_t epochs = 1;
  Rng* rng = nullptr;
  BnPolicy bn = BnPolicy::Eval;
};

/// Per-batch hyperparameters after the warmup schedule.
struct StepParams {
  double lambda = 1.0;
  AttackConfig attack;
};

/// Draws ratios, recomputes masks from the current theta, runs the SABR
/// attacks and the AWP search.
Selections prepare_selections(const Network& net, const CompressionSet& set, const Batch& batch,
                              const StepParams& step, const RefreshContext& ctx);

struct CactusReport {
  double total = 0.0;
  double std_loss = 0.0;   ///< mean over elements
  double cert_loss = 0.0;  ///< mean over elements
  std::vector<double> element_losses;
  std::vector<double> gradient;
  std::size_t correct = 0;  ///< clean predictions of the full network
  BnFrame frame;            ///< batch statistics of the full network
};

/// Mean over elements of lambda * L_std + (1 - lambda) * L_cert under fixed selections.
CactusReport evaluate_cactus(const Network& net, const CompressionSet& set, const Selections& selections,
                             const Batch& batch, const StepParams& step, BnPolicy bn, bool with_gradient);

/// Single element's combined loss under fixed selections.
LossEval evaluate_element(const Network& net, const CompressionSet& set, const Selections& selections,
                          std::size_t element, const Batch& batch, const StepParams& step, BnPolicy bn,
                          bool with_gradient);

/// prepare_selections followed by evaluate_cactus.
CactusReport cactus_loss(const Network& net, const CompressionSet& set, const Batch& batch, const StepParams& step,
                         const RefreshContext& ctx, bool with_gradient = true);

struct LambdaSchedule {
  std::size_t warmup_iters = 250;
  std::size_t ramp_iters = 250;
  double lambda_final = 0.75;

  /// Weight of the standard loss at 1-based iteration t.
  double lambda(std::uint64_t t) const;
  /// Fraction of the target epsilon in effect at iteration t.
  double eps_fraction(std::uint64_t t) const;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

/// theta <- Adam(theta, grad + weight_decay * theta).
void adam_step(std::vector<double>& theta, std::span<const double> grad, const AdamConfig& cfg, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  AdamConfig adam;
  LambdaSchedule schedule;
  /// Target radius and PGD settings; tau follows tau_ratio * current epsilon.
  AttackConfig attack;
  double tau_ratio = 0.4;
  std::uint64_t seed = 0;
  /// One optimizer step per element instead of one per batch.
  bool update_per_element = false;
  /// Stop after this many completed epochs (0 runs all); lets a run be resumed later.
  std::size_t stop_after_epochs = 0;
  /// Metrics and checkpoints are written here when non-empty.
  std::filesystem::path out_dir;

  void validate() const;
  StepParams step_params(std::uint64_t iteration) const;
};

struct TrainState {
  std::uint64_t iteration = 0;
  std::uint64_t epochs_done = 0;
  AdamState adam;
};

std::vector<std::uint8_t> encode_train_state(const TrainState& state);
TrainState decode_train_state(std::span<const std::uint8_t> bytes);

struct MetricsRow {
  std::uint64_t iter = 0;
  std::uint64_t epoch = 0;
  double lambda = 1.0;
  double eps = 0.0;
  double loss_total = 0.0;
  double loss_std = 0.0;
  double loss_cert = 0.0;
  std::vector<double> element_losses;
  double train_acc = 0.0;
};

std::string metrics_header(const CompressionSet& set);
std::string format_metrics_row(const MetricsRow& row);

struct TrainResult {
  std::vector<MetricsRow> rows;
  TrainState state;
};

using TrainObserver = std::function<void(const MetricsRow&)>;

// Training loop on the CACTUS loss. Resuming from a checkpoint written by this
// function continues the run exactly where it stopped.
class Trainer {
 public:
  Trainer(Network& net, const Batch& data, TrainConfig cfg, CompressionSet set);

  void resume(const Checkpoint& ckpt);
  TrainResult run(const TrainObserver& observer = {});

  const TrainState& state() const { return state_; }
  Checkpoint checkpoint() const;

 private:
  MetricsRow step(const Batch& batch, std::size_t epoch);
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  void write_checkpoint(std::size_t epoch) const;

  Network& net_;
  const Batch& data_;
  TrainConfig cfg_;
  CompressionSet set_;
  TrainState state_;
  Rng rng_;
};

TrainResult train(Network& net, const Batch& data, const TrainConfig& cfg, const CompressionSet& set,
                  const TrainObserver& observer = {});

}  // namespace cactus
