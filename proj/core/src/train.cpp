#include "cactus/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cactus/error.hpp"

namespace cactus {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

double draw_ratio(const RatioSampler& s, const RefreshContext& ctx) {
  switch (s.kind) {
    case RatioSampler::Kind::Fixed:
      return s.lo;
    case RatioSampler::Kind::Uniform:
      return s.lo + (s.hi - s.lo) * uniform01(*ctx.rng);
    case RatioSampler::Kind::Choice:
      return s.choices.at(uniform_index(*ctx.rng, s.choices.size()));
    case RatioSampler::Kind::Progressive: {
      const double frac = ctx.epochs > 1 ? static_cast<double>(ctx.epoch) / static_cast<double>(ctx.epochs - 1) : 1.0;
      return s.lo + (s.hi - s.lo) * std::min(frac, 1.0);
    }
  }
  return s.lo;
}

bool needs_gradient(const CompressionElement& e) {
  const auto* p = std::get_if<PruneElement>(&e);
  return p && p->spec.score == PruneScore::GradMag;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void check_finite(const CactusReport& r, std::uint64_t iteration) {
  bool ok = std::isfinite(r.total);
  for (double g : r.gradient) ok = ok && std::isfinite(g);
  if (!ok) {
    throw NumericError("training diverged at iteration " + std::to_string(iteration) + ": loss = " + fmt(r.total));
  }
}

void validate_sampler(const RatioSampler& s) {
  auto check = [](double r) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("pruning ratio must lie in [0, 1), got " + std::to_string(r));
  };
  check(s.lo);
  if (s.kind == RatioSampler::Kind::Uniform || s.kind == RatioSampler::Kind::Progressive) {
    check(s.hi);
    if (s.hi < s.lo) throw ConfigError("pruning ratio range is reversed");
  }
  if (s.kind == RatioSampler::Kind::Choice) {
    if (s.choices.empty()) throw ConfigError("pruning ratio choice list is empty");
    for (double r : s.choices) check(r);
  }
}

}  // namespace

std::string element_kind(const CompressionElement& element) {
  return std::visit(Overloaded{[](const IdentityElement&) { return std::string("identity"); },
                               [](const PruneElement&) { return std::string("prune"); },
                               [](const QuantProxyElement&) { return std::string("quant"); }},
                    element);
}

void CompressionSet::validate() const {
  if (elements.empty()) throw ConfigError("compression set is empty");
  if (!std::holds_alternative<IdentityElement>(elements.front())) {
    throw ConfigError("compression set must start with the full network");
  }
  for (const CompressionElement& e : elements) {
    if (const auto* p = std::get_if<PruneElement>(&e)) {
      validate_sampler(p->ratio);
      if (p->spec.roles.empty()) throw ConfigError("pruning spec targets no parameter roles");
    }
    if (const auto* q = std::get_if<QuantProxyElement>(&e)) {
      if (!(q->awp.eta >= 0.0)) throw ConfigError("awp eta must be >= 0");
      if (q->awp.steps < 1) throw ConfigError("awp steps must be >= 1");
    }
  }
}

CompressionSet& CompressionSet::add_quant_proxy(const AwpConfig& awp) {
  elements.push_back(QuantProxyElement{awp});
  return *this;
}

CompressionSet identity_set() { return CompressionSet{}; }

CompressionSet sampled_prune_set(const PruneSpec& method, double lo, double hi, std::size_t count) {
  CompressionSet set;
  set.strategy = SetStrategy::Sampled;
  for (std::size_t i = 0; i < count; ++i) {
    set.elements.push_back(PruneElement{method, {RatioSampler::Kind::Uniform, lo, hi, {}}});
  }
  return set;
}

CompressionSet fixed_prune_set(const PruneSpec& method, const std::vector<double>& ratios) {
  CompressionSet set;
  set.strategy = SetStrategy::Fixed;
  for (double r : ratios) set.elements.push_back(PruneElement{method, {RatioSampler::Kind::Fixed, r, r, {}}});
  return set;
}

CompressionSet progressive_prune_set(const PruneSpec& method, double from, double to) {
  CompressionSet set;
  set.strategy = SetStrategy::Progressive;
  set.elements.push_back(PruneElement{method, {RatioSampler::Kind::Progressive, from, to, {}}});
  return set;
}

CompressionSet default_cactus_set() { return sampled_prune_set(parse_prune_method("GUl1"), 0.25, 0.75); }

Selections prepare_selections(const Network& net, const CompressionSet& set, const Batch& batch,
                              const StepParams& step, const RefreshContext& ctx) {
  set.validate();
  step.attack.validate();
  if (!ctx.rng) throw Error("prepare_selections: no random generator");
  const bool certified = step.attack.epsilon > 0.0;
  Selections sel;
  sel.elements.resize(set.elements.size());

  std::optional<std::vector<double>> snapshot;
  auto gradient_snapshot = [&]() -> std::span<const double> {
    if (!snapshot) {
      LossRequest r;
      if (sel.elements[0].centers) r.centers = &*sel.elements[0].centers;
      r.tau = step.attack.tau;
      r.std_weight = step.lambda;
      r.cert_weight = 1.0 - step.lambda;
      r.bn = ctx.bn;
      snapshot = evaluate_losses(NetworkView(net), batch, r).gradient;
    }
    return *snapshot;
  };

  for (std::size_t i = 0; i < set.elements.size(); ++i) {
    ElementSelection& s = sel.elements[i];
    std::visit(Overloaded{
                   [&](const IdentityElement&) {
                     if (certified) s.centers = sabr_centers(NetworkView(net), batch, step.attack, *ctx.rng);
                   },
                   [&](const PruneElement& p) {
                     PruneSpec spec = p.spec;
                     spec.ratio = s.ratio = draw_ratio(p.ratio, ctx);
                     s.mask = compute_mask(net, spec,
                                           needs_gradient(set.elements[i]) ? gradient_snapshot()
                                                                           : std::span<const double>{});
                     if (certified) s.centers = sabr_centers(apply_mask(net, s.mask), batch, step.attack, *ctx.rng);
                   },
                   [&](const QuantProxyElement& q) {
                     // Same network and batch as the full-network element, so its centers are reused.
                     s.centers = sel.elements[0].centers;
                     LossRequest r;
                     if (s.centers) r.centers = &*s.centers;
                     r.tau = step.attack.tau;
                     r.bn = ctx.bn;
                     s.delta = awp_perturb(NetworkView(net), batch, r, step.lambda, q.awp);
                   },
               },
               set.elements[i]);
  }
  return sel;
}

LossEval evaluate_element(const Network& net, const CompressionSet& set, const Selections& selections,
                          std::size_t element, const Batch& batch, const StepParams& step, BnPolicy bn,
                          bool with_gradient) {
  const ElementSelection& s = selections.elements.at(element);
  LossRequest r;
  if (s.centers) r.centers = &*s.centers;
  r.tau = step.attack.tau;
  r.std_weight = step.lambda;
  r.cert_weight = 1.0 - step.lambda;
  r.bn = bn;
  r.with_gradient = with_gradient;
  const NetworkView view = std::visit(
      Overloaded{[&](const IdentityElement&) { return NetworkView(net); },
                 [&](const PruneElement&) { return apply_mask(net, s.mask); },
                 [&](const QuantProxyElement&) {
                   if (s.delta.delta.size() != net.num_params()) throw Error("weight perturbation not prepared");
                   return NetworkView(net).with_offset(s.delta.delta);
                 }},
      set.elements.at(element));
  return evaluate_losses(view, batch, r);
}

CactusReport evaluate_cactus(const Network& net, const CompressionSet& set, const Selections& selections,
                             const Batch& batch, const StepParams& step, BnPolicy bn, bool with_gradient) {
  set.validate();
  if (selections.elements.size() != set.elements.size()) throw Error("selections do not match the compression set");
  CactusReport report;
  const double count = static_cast<double>(set.elements.size());
  if (with_gradient) report.gradient.assign(net.num_params(), 0.0);
  for (std::size_t i = 0; i < set.elements.size(); ++i) {
    LossEval e = evaluate_element(net, set, selections, i, batch, step, bn, with_gradient);
    report.element_losses.push_back(e.weighted);
    report.total += e.weighted;
    report.std_loss += e.std_loss;
    report.cert_loss += e.cert_loss;
    if (with_gradient) {
      for (std::size_t j = 0; j < e.gradient.size(); ++j) report.gradient[j] += e.gradient[j];
    }
    if (i == 0) {
      report.correct = e.correct;
      report.frame = std::move(e.frame);
    }
  }
  report.total /= count;
  report.std_loss /= count;
  report.cert_loss /= count;
  for (double& g : report.gradient) g /= count;
  return report;
}

CactusReport cactus_loss(const Network& net, const CompressionSet& set, const Batch& batch, const StepParams& step,
                         const RefreshContext& ctx, bool with_gradient) {
  const Selections sel = prepare_selections(net, set, batch, step, ctx);
  return evaluate_cactus(net, set, sel, batch, step, ctx.bn, with_gradient);
}

double LambdaSchedule::eps_fraction(std::uint64_t t) const {
  if (t <= warmup_iters) return 0.0;
  if (ramp_iters == 0) return 1.0;
  return std::min(1.0, static_cast<double>(t - warmup_iters) / static_cast<double>(ramp_iters));
}

double LambdaSchedule::lambda(std::uint64_t t) const {
  if (t <= warmup_iters) return 1.0;
  return 1.0 - eps_fraction(t) * (1.0 - lambda_final);
}

void adam_step(std::vector<double>& theta, std::span<const double> grad, const AdamConfig& cfg, AdamState& state) {
  const std::size_t n = theta.size();
  if (grad.size() != n) throw Error("adam_step: gradient size mismatch");
  if (state.m.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i] + cfg.weight_decay * theta[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    theta[i] -= cfg.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(schedule.lambda_final >= 0.0 && schedule.lambda_final <= 1.0)) {
    throw ConfigError("train.lambda_final must lie in [0, 1]");
  }
  if (!(tau_ratio >= 0.0 && tau_ratio <= 1.0)) throw ConfigError("attack.tau_ratio must lie in [0, 1]");
  AttackConfig a = attack;
  a.tau = tau_ratio * a.epsilon;
  a.validate();
}

StepParams TrainConfig::step_params(std::uint64_t iteration) const {
  StepParams p;
  p.lambda = schedule.lambda(iteration);
  p.attack = attack;
  p.attack.epsilon = attack.epsilon * schedule.eps_fraction(iteration);
  p.attack.tau = tau_ratio * p.attack.epsilon;
  return p;
}

std::vector<std::uint8_t> encode_train_state(const TrainState& state) {
  ByteWriter w;
  w.u64(state.iteration);
  w.u64(state.epochs_done);
  w.u64(state.adam.step);
  w.u64(state.adam.m.size());
  w.f64s(state.adam.m);
  w.u64(state.adam.v.size());
  w.f64s(state.adam.v);
  return w.take();
}

TrainState decode_train_state(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "training state section");
  TrainState s;
  s.iteration = r.u64();
  s.epochs_done = r.u64();
  s.adam.step = r.u64();
  s.adam.m = r.f64s();
  s.adam.v = r.f64s();
  r.expect_done();
  if (s.adam.m.size() != s.adam.v.size()) throw IoError("training state section: moment sizes differ");
  return s;
}

std::string metrics_header(const CompressionSet& set) {
  std::string h = "iter,epoch,lambda,eps,loss_total,loss_std,loss_cert";
  for (std::size_t i = 0; i < set.elements.size(); ++i) {
    h += ",elem" + std::to_string(i) + "_" + element_kind(set.elements[i]);
  }
  return h + ",train_acc";
}

std::string format_metrics_row(const MetricsRow& row) {
  std::string s = std::to_string(row.iter) + "," + std::to_string(row.epoch) + "," + fmt(row.lambda) + "," +
                  fmt(row.eps) + "," + fmt(row.loss_total) + "," + fmt(row.loss_std) + "," + fmt(row.loss_cert);
  for (double e : row.element_losses) s += "," + fmt(e);
  return s + "," + fmt(row.train_acc);
}

Trainer::Trainer(Network& net, const Batch& data, TrainConfig cfg, CompressionSet set)
    : net_(net), data_(data), cfg_(std::move(cfg)), set_(std::move(set)), rng_(derive_seed(cfg_.seed, 0)) {
  cfg_.validate();
  set_.validate();
  if (data_.size() == 0) throw ConfigError("training data is empty");
  check_input(net_, data_.x.shape());
  if (data_.x.dim(0) != data_.size()) throw ShapeError("training inputs and labels differ in count");
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (ckpt.network.architecture() != net_.architecture()) {
    throw ConfigError("checkpoint architecture '" + format_architecture(ckpt.network.architecture()) +
                      "' does not match '" + format_architecture(net_.architecture()) + "'");
  }
  const auto it = ckpt.sections.find("TRST");
  if (it == ckpt.sections.end()) throw IoError("checkpoint has no training state to resume from");
  net_ = ckpt.network;
  state_ = decode_train_state(it->second);
  cfg_.seed = ckpt.seed;
  restore_rng_state(rng_, ckpt.rng_state);
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt{net_, cfg_.seed, rng_state(rng_), state_.iteration, {}};
  ckpt.sections["TRST"] = encode_train_state(state_);
  return ckpt;
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order(data_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle(derive_seed(cfg_.seed, epoch + 1));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[uniform_index(shuffle, i)]);
  }
  return order;
}

void Trainer::write_checkpoint(std::size_t epoch) const {
  if (cfg_.out_dir.empty()) return;
  const Checkpoint ckpt = checkpoint();
  save_checkpoint(cfg_.out_dir / ("ckpt_epoch" + std::to_string(epoch) + ".bin"), ckpt);
  save_checkpoint(cfg_.out_dir / "last.bin", ckpt);
}

MetricsRow Trainer::step(const Batch& batch, std::size_t epoch) {
  const std::uint64_t t = ++state_.iteration;
  const StepParams sp = cfg_.step_params(t);
  const RefreshContext ctx{epoch, cfg_.epochs, &rng_, BnPolicy::Train};
  const Selections sel = prepare_selections(net_, set_, batch, sp, ctx);

  MetricsRow row;
  row.iter = t;
  row.epoch = epoch + 1;
  row.lambda = sp.lambda;
  row.eps = sp.attack.epsilon;

  CactusReport report;
  if (!cfg_.update_per_element) {
    report = evaluate_cactus(net_, set_, sel, batch, sp, BnPolicy::Train, true);
    check_finite(report, t);
    if (!net_.bn_stats().empty()) update_running_stats(net_, report.frame);
    std::vector<double> theta = net_.flat_params();
    adam_step(theta, report.gradient, cfg_.adam, state_.adam);
    net_.set_flat_params(theta);
  } else {
    const double count = static_cast<double>(set_.elements.size());
    for (std::size_t i = 0; i < set_.elements.size(); ++i) {
      LossEval e = evaluate_element(net_, set_, sel, i, batch, sp, BnPolicy::Train, true);
      CactusReport single;
      single.total = e.weighted;
      single.gradient = std::move(e.gradient);
      check_finite(single, t);
      if (i == 0) {
        report.correct = e.correct;
        if (!net_.bn_stats().empty()) update_running_stats(net_, e.frame);
      }
      report.element_losses.push_back(e.weighted);
      report.total += e.weighted / count;
      report.std_loss += e.std_loss / count;
      report.cert_loss += e.cert_loss / count;
      std::vector<double> theta = net_.flat_params();
      adam_step(theta, single.gradient, cfg_.adam, state_.adam);
      net_.set_flat_params(theta);
    }
  }
  row.loss_total = report.total;
  row.loss_std = report.std_loss;
  row.loss_cert = report.cert_loss;
  row.element_losses = std::move(report.element_losses);
  row.train_acc = static_cast<double>(report.correct) / static_cast<double>(batch.size());
  return row;
}

TrainResult Trainer::run(const TrainObserver& observer) {
  std::ofstream metrics;
  if (!cfg_.out_dir.empty()) {
    std::filesystem::create_directories(cfg_.out_dir);
    const auto path = cfg_.out_dir / "metrics.csv";
    std::vector<std::string> kept{metrics_header(set_)};
    if (state_.iteration > 0) {
      // Drop rows logged after the checkpoint being resumed.
      std::ifstream old(path);
      std::string line;
      std::getline(old, line);
      while (std::getline(old, line)) {
        if (std::stoull(line.substr(0, line.find(','))) <= state_.iteration) kept.push_back(line);
      }
    }
    metrics.open(path, std::ios::trunc);
    if (!metrics) throw IoError("cannot write '" + path.string() + "'");
    for (const std::string& l : kept) metrics << l << '\n';
  }

  TrainResult result;
  const Mode previous = net_.mode();
  net_.set_mode(Mode::Train);
  for (std::size_t epoch = state_.epochs_done; epoch < cfg_.epochs; ++epoch) {
    if (cfg_.stop_after_epochs > 0 && epoch >= cfg_.stop_after_epochs) break;
    const std::vector<std::size_t> order = epoch_order(epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      const std::size_t end = std::min(begin + cfg_.batch_size, order.size());
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Batch batch{data_.x.gather_rows(idx), {}};
      for (std::size_t i : idx) batch.y.push_back(data_.y[i]);
      MetricsRow row = step(batch, epoch);
      if (metrics.is_open()) metrics << format_metrics_row(row) << '\n';
      if (observer) observer(row);
      result.rows.push_back(std::move(row));
    }
    state_.epochs_done = epoch + 1;
    if (metrics.is_open()) metrics.flush();
    write_checkpoint(epoch + 1);
  }
  net_.set_mode(previous);
  result.state = state_;
  return result;
}

TrainResult train(Network& net, const Batch& data, const TrainConfig& cfg, const CompressionSet& set,
                  const TrainObserver& observer) {
  Trainer trainer(net, data, cfg, set);
  return trainer.run(observer);
}

}  // namespace cactus
