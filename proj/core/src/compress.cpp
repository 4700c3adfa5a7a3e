#include "cactus/compress.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <tuple>

#include "cactus/checkpoint.hpp"
#include "cactus/error.hpp"

namespace cactus {
namespace {

bool is_weighted(const LayerSpec& layer) {
  return std::holds_alternative<DenseSpec>(layer) || std::holds_alternative<Conv2dSpec>(layer);
}

double channel_score(std::span<const double> w, std::span<const double> g, PruneScore score) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    switch (score) {
      case PruneScore::L1: acc += std::abs(w[i]); break;
      case PruneScore::L2: acc += w[i] * w[i]; break;
      case PruneScore::GradMag: acc += (g[i] * w[i]) * (g[i] * w[i]); break;
    }
  }
  return score == PruneScore::L1 ? acc : std::sqrt(acc);
}

double scalar_score(double w, double g, PruneScore score) {
  switch (score) {
    case PruneScore::L1: return std::abs(w);
    case PruneScore::L2: return w * w;
    case PruneScore::GradMag: return std::abs(g * w);
  }
  return 0.0;
}

struct Ranked {
  double score;
  std::size_t order;  // ParamId order of the unit's first scalar
  auto operator<=>(const Ranked&) const = default;
};

// Indices of the `count` lowest-ranked units.
std::vector<std::size_t> lowest(std::vector<Ranked> units, std::size_t count) {
  std::vector<std::size_t> idx(units.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return units[a] < units[b]; });
  idx.resize(count);
  return idx;
}

std::size_t floor_count(double ratio, std::size_t d) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(d)));
}

std::size_t round_count(double ratio, std::size_t d) {
  return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(d)));
}

void unstructured(const Network& net, const PruneSpec& spec, std::span<const double> grads, PruningMask& mask) {
  // Each group is ranked separately: one group for Global, one per layer for Local.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (const ParamTensor& p : net.params()) {
    if (std::find(spec.roles.begin(), spec.roles.end(), p.role) == spec.roles.end()) continue;
    auto& group = groups[spec.scope == PruneScope::Global ? 0 : p.layer];
    for (std::size_t i = 0; i < p.value.numel(); ++i) group.push_back(p.flat_offset + i);
    mask.target_count += p.value.numel();
  }
  const auto flat = net.flat_params();
  for (const auto& [key, members] : groups) {
    std::vector<Ranked> units;
    units.reserve(members.size());
    for (std::size_t idx : members) {
      units.push_back({scalar_score(flat[idx], grads.empty() ? 0.0 : grads[idx], spec.score), idx});
    }
    for (std::size_t u : lowest(std::move(units), floor_count(spec.ratio, members.size()))) {
      mask.keep[members[u]] = 0.0;
    }
  }
}

void structured(const Network& net, const PruneSpec& spec, std::span<const double> grads, PruningMask& mask) {
  std::vector<std::size_t> layers;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (is_weighted(net.layers()[l])) layers.push_back(l);
  }
  if (!layers.empty()) layers.pop_back();  // the classifier keeps all its outputs
  if (layers.empty()) {
    if (spec.ratio > 0.0) throw ConfigError("structured pruning: network has no prunable hidden layer");
    return;
  }

  struct Channel {
    std::size_t layer_slot;
    std::size_t begin;  // flat index of the channel's first weight
    std::size_t size;
  };
  std::vector<Channel> channels;
  std::vector<std::size_t> per_layer(layers.size(), 0);
  std::vector<Ranked> units;
  for (std::size_t s = 0; s < layers.size(); ++s) {
    const ParamTensor& w = net.params()[*net.find_param(layers[s], ParamRole::Weight)];
    const std::size_t count = w.value.dim(0);
    const std::size_t size = w.value.numel() / count;
    per_layer[s] = count;
    mask.target_count += w.value.numel();
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t begin = w.flat_offset + c * size;
      const auto wv = w.value.data().subspan(c * size, size);
      const auto gv = grads.empty() ? std::span<const double>(wv) : grads.subspan(begin, size);
      double score = channel_score(wv, gv, spec.score);
      if (spec.scope == PruneScope::Global) score /= static_cast<double>(size);
      channels.push_back({s, begin, size});
      units.push_back({score, begin});
    }
  }

  std::vector<std::size_t> pruned;
  if (spec.scope == PruneScope::Global) {
    pruned = lowest(units, round_count(spec.ratio, units.size()));
  } else {
    std::size_t first = 0;
    for (std::size_t s = 0; s < layers.size(); ++s) {
      std::vector<Ranked> local(units.begin() + static_cast<std::ptrdiff_t>(first),
                                units.begin() + static_cast<std::ptrdiff_t>(first + per_layer[s]));
      for (std::size_t u : lowest(std::move(local), round_count(spec.ratio, per_layer[s]))) pruned.push_back(first + u);
      first += per_layer[s];
    }
  }

  std::vector<std::size_t> removed(layers.size(), 0);
  for (std::size_t u : pruned) {
    const Channel& ch = channels[u];
    ++removed[ch.layer_slot];
    std::fill_n(mask.keep.begin() + static_cast<std::ptrdiff_t>(ch.begin), ch.size, 0.0);
  }
  for (std::size_t s = 0; s < layers.size(); ++s) {
    if (removed[s] >= per_layer[s]) {
      throw ConfigError("structured pruning at ratio " + std::to_string(spec.ratio) + " would remove all " +
                        std::to_string(per_layer[s]) + " channels of layer " + std::to_string(layers[s]));
    }
  }
}

std::int64_t to_signed(std::uint64_t v) { return static_cast<std::int64_t>(v); }

}  // namespace

void PruneSpec::validate() const {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("pruning ratio must lie in [0, 1), got " + std::to_string(ratio));
  if (roles.empty()) throw ConfigError("pruning spec targets no parameter roles");
}

PruneSpec parse_prune_method(std::string_view code, double ratio) {
  PruneSpec spec;
  spec.ratio = ratio;
  const std::string c(code);
  if (c.size() < 3) throw ConfigError("unknown pruning method '" + c + "'");
  if (c[0] == 'G') spec.scope = PruneScope::Global;
  else if (c[0] == 'L') spec.scope = PruneScope::Local;
  else throw ConfigError("pruning method '" + c + "': scope must be G or L");
  if (c[1] == 'U') spec.structure = PruneStructure::Unstructured;
  else if (c[1] == 'S') spec.structure = PruneStructure::StructuredChannel;
  else throw ConfigError("pruning method '" + c + "': structure must be U or S");
  const std::string score = c.substr(2);
  if (score == "l1") spec.score = PruneScore::L1;
  else if (score == "l2") spec.score = PruneScore::L2;
  else if (score == "g") spec.score = PruneScore::GradMag;
  else throw ConfigError("pruning method '" + c + "': score must be l1, l2 or g");
  return spec;
}

std::string prune_method_code(const PruneSpec& spec) {
  std::string code;
  code += spec.scope == PruneScope::Global ? 'G' : 'L';
  code += spec.structure == PruneStructure::Unstructured ? 'U' : 'S';
  switch (spec.score) {
    case PruneScore::L1: code += "l1"; break;
    case PruneScore::L2: code += "l2"; break;
    case PruneScore::GradMag: code += "g"; break;
  }
  return code;
}

double PruningMask::sparsity() const {
  return target_count == 0 ? 0.0 : static_cast<double>(pruned_count) / static_cast<double>(target_count);
}

PruningMask compute_mask(const Network& net, const PruneSpec& spec, std::span<const double> grads) {
  spec.validate();
  if (spec.score == PruneScore::GradMag && grads.size() != net.num_params()) {
    throw Error("gradient-magnitude pruning needs a gradient snapshot of " + std::to_string(net.num_params()) +
                " values, got " + std::to_string(grads.size()));
  }
  PruningMask mask;
  mask.keep.assign(net.num_params(), 1.0);
  if (spec.structure == PruneStructure::Unstructured) {
    unstructured(net, spec, grads, mask);
  } else {
    structured(net, spec, grads, mask);
  }
  mask.pruned_count = static_cast<std::size_t>(std::count(mask.keep.begin(), mask.keep.end(), 0.0));
  return mask;
}

NetworkView apply_mask(const Network& net, const PruningMask& mask) {
  if (mask.keep.size() != net.num_params()) {
    throw ShapeError("mask has " + std::to_string(mask.keep.size()) + " entries, network has " +
                     std::to_string(net.num_params()) + " parameters");
  }
  return NetworkView(net, mask.keep);
}

Network materialize(const NetworkView& view) {
  Network out = view.net();
  std::vector<double> flat = out.flat_params();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (!view.offset().empty()) flat[i] += view.offset()[i];
    if (!view.mask().empty()) flat[i] *= view.mask()[i];
  }
  out.set_flat_params(flat);
  return out;
}

std::vector<std::uint8_t> encode_mask(const PruningMask& mask) {
  ByteWriter w;
  w.u64(mask.keep.size());
  w.u64(mask.target_count);
  for (double k : mask.keep) w.u8(k != 0.0 ? 1 : 0);
  return w.take();
}

PruningMask decode_mask(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "mask section");
  PruningMask mask;
  mask.keep.resize(r.u64());
  mask.target_count = r.u64();
  for (double& k : mask.keep) {
    const std::uint8_t v = r.u8();
    if (v > 1) throw IoError("mask section: entry is neither 0 nor 1");
    k = v;
  }
  r.expect_done();
  mask.pruned_count = static_cast<std::size_t>(std::count(mask.keep.begin(), mask.keep.end(), 0.0));
  return mask;
}

QuantSpec QuantSpec::grid(double q_step) {
  if (!(q_step > 0.0)) throw ConfigError("quantization step must be > 0");
  return QuantSpec{0, q_step, 0.0, -(std::int64_t{1} << 52), std::int64_t{1} << 52};
}

double quantize_value(double w, const QuantSpec& spec) {
  const double lo = static_cast<double>(spec.q_min);
  const double hi = static_cast<double>(spec.q_max);
  const double q = std::clamp(std::round((w - spec.zero_point) / spec.scale), lo, hi);
  double best = q * spec.scale + spec.zero_point;
  if (std::abs(best - w) > spec.scale / 2) {
    // The division above can land a hair on the wrong side of a midpoint.
    for (double alt : {q - 1.0, q + 1.0}) {
      if (alt < lo || alt > hi) continue;
      const double v = alt * spec.scale + spec.zero_point;
      if (std::abs(v - w) < std::abs(best - w)) best = v;
    }
  }
  return best;
}

QuantSpec calibrate_quant(std::span<const double> weights, int bits) {
  if (bits < 2 || bits > 32) throw ConfigError("quantization bits must lie in [2, 32], got " + std::to_string(bits));
  if (weights.empty()) throw Error("calibrate_quant: no weights");
  QuantSpec spec;
  spec.bits = bits;
  spec.q_min = -(std::int64_t{1} << (bits - 1));
  spec.q_max = (std::int64_t{1} << (bits - 1)) - 1;
  const auto [mn, mx] = std::minmax_element(weights.begin(), weights.end());
  if (!std::isfinite(*mn) || !std::isfinite(*mx)) throw NumericError("calibrate_quant: non-finite weight");
  if (*mx == *mn) {
    spec.scale = 1.0;
    spec.zero_point = *mn;
    return spec;
  }
  spec.scale = (*mx - *mn) / static_cast<double>(spec.q_max - spec.q_min);
  spec.zero_point = *mn - static_cast<double>(spec.q_min) * spec.scale;
  return spec;
}

QuantPlan calibrate_network(const Network& net, int bits, QuantGranularity granularity) {
  QuantPlan plan;
  plan.granularity = granularity;
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    if (!is_weighted(net.layers()[l])) continue;
    std::vector<std::size_t> tensors{*net.find_param(l, ParamRole::Weight)};
    if (auto b = net.find_param(l, ParamRole::Bias)) tensors.push_back(*b);
    if (granularity == QuantGranularity::PerLayer) {
      std::vector<double> values;
      for (std::size_t t : tensors) {
        const auto d = net.params()[t].value.data();
        values.insert(values.end(), d.begin(), d.end());
      }
      plan.entries.push_back({tensors, calibrate_quant(values, bits)});
    } else {
      for (std::size_t t : tensors) plan.entries.push_back({{t}, calibrate_quant(net.params()[t].value.data(), bits)});
    }
  }
  return plan;
}

Network quantize_weights(const Network& net, const QuantPlan& plan) {
  Network out = net;
  for (const QuantEntry& e : plan.entries) {
    for (std::size_t t : e.tensors) {
      if (t >= out.params().size()) throw Error("quantization plan refers to missing parameter tensor");
      for (double& v : out.params()[t].value.data()) v = quantize_value(v, e.spec);
    }
  }
  return out;
}

Network quantize_weights(const Network& net, int bits, QuantGranularity granularity) {
  return quantize_weights(net, calibrate_network(net, bits, granularity));
}

Network quantize_weights(const Network& net, const QuantSpec& spec) {
  Network out = net;
  for (ParamTensor& p : out.params()) {
    if (p.role != ParamRole::Weight && p.role != ParamRole::Bias) continue;
    for (double& v : p.value.data()) v = quantize_value(v, spec);
  }
  return out;
}

Var ste_quantize(Var w, const QuantSpec& spec) {
  const Tensor& in = w.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = quantize_value(in[i], spec);
  return w.tape()->record(std::move(out), {w}, [w, spec](Tape& t, const Tensor& g) {
    const Tensor& x = w.value();
    Tensor& gx = t.grad_buffer(w);
    const double lo = static_cast<double>(spec.q_min), hi = static_cast<double>(spec.q_max);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double r = (x[i] - spec.zero_point) / spec.scale;
      if (r >= lo && r <= hi) gx[i] += g[i];
    }
  });
}

std::vector<std::uint8_t> encode_quant_plan(const QuantPlan& plan) {
  ByteWriter w;
  w.u8(plan.granularity == QuantGranularity::PerLayer ? 0 : 1);
  w.u64(plan.entries.size());
  for (const QuantEntry& e : plan.entries) {
    w.u64(e.tensors.size());
    for (std::size_t t : e.tensors) w.u64(t);
    w.u32(static_cast<std::uint32_t>(e.spec.bits));
    w.f64(e.spec.scale);
    w.f64(e.spec.zero_point);
    w.u64(static_cast<std::uint64_t>(e.spec.q_min));
    w.u64(static_cast<std::uint64_t>(e.spec.q_max));
  }
  return w.take();
}

QuantPlan decode_quant_plan(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "quantization section");
  QuantPlan plan;
  const std::uint8_t g = r.u8();
  if (g > 1) throw IoError("quantization section: unknown granularity");
  plan.granularity = g == 0 ? QuantGranularity::PerLayer : QuantGranularity::PerTensor;
  plan.entries.resize(r.u64());
  for (QuantEntry& e : plan.entries) {
    e.tensors.resize(r.u64());
    for (std::size_t& t : e.tensors) t = r.u64();
    e.spec.bits = static_cast<int>(r.u32());
    e.spec.scale = r.f64();
    e.spec.zero_point = r.f64();
    e.spec.q_min = to_signed(r.u64());
    e.spec.q_max = to_signed(r.u64());
  }
  r.expect_done();
  return plan;
}

}  // namespace cactus
