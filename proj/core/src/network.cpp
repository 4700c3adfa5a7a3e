#include "cactus/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cactus/error.hpp"
#include "cactus/rng.hpp"

namespace cactus {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string describe(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const DenseSpec& d) {
            return "dense " + std::to_string(d.in) + " " + std::to_string(d.out) +
                   (d.has_bias ? "" : " nobias");
          },
          [](const Conv2dSpec& c) {
            return "conv " + std::to_string(c.in_channels) + " " + std::to_string(c.out_channels) +
                   " " + std::to_string(c.kernel) + " s" + std::to_string(c.stride) + " p" +
                   std::to_string(c.padding) + (c.has_bias ? "" : " nobias");
          },
          [](const ReluSpec&) { return std::string("relu"); },
          [](const FlattenSpec&) { return std::string("flatten"); },
          [](const BatchNormSpec& b) { return "bn " + std::to_string(b.features); },
      },
      layer);
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::string current;
  for (char ch : text) {
    if (ch == sep) {
      parts.push_back(current);
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  parts.push_back(current);
  return parts;
}

std::vector<std::string> tokens(const std::string& clause) {
  std::istringstream in(clause);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::size_t parse_size(const std::string& tok, std::string_view clause) {
  std::size_t pos = 0;
  unsigned long long value = 0;
  try {
    value = std::stoull(tok, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != tok.size() || tok.empty() || tok[0] == '-') {
    throw ConfigError("architecture: expected a non-negative integer, got '" + tok + "' in '" +
                      std::string(clause) + "'");
  }
  return static_cast<std::size_t>(value);
}

void kaiming_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (double& v : t.data()) v = uniform(rng, -bound, bound);
}

}  // namespace

// --- architecture text ----------------------------------------------------

std::string format_architecture(const Architecture& arch) {
  std::ostringstream out;
  out << "in ";
  for (std::size_t i = 0; i < arch.input_shape.size(); ++i) {
    if (i) out << 'x';
    out << arch.input_shape[i];
  }
  for (const auto& layer : arch.layers) out << "; " << describe(layer);
  return out.str();
}

Architecture parse_architecture(std::string_view text) {
  Architecture arch;
  bool saw_input = false;
  for (const std::string& clause : split(text, ';')) {
    const auto tok = tokens(clause);
    if (tok.empty()) continue;
    const std::string& kind = tok[0];
    if (kind == "in") {
      if (tok.size() != 2) throw ConfigError("architecture: 'in' takes one shape, got '" + clause + "'");
      for (const std::string& d : split(tok[1], 'x')) arch.input_shape.push_back(parse_size(d, clause));
      saw_input = true;
    } else if (kind == "dense") {
      if (tok.size() < 3 || tok.size() > 4 || (tok.size() == 4 && tok[3] != "nobias")) {
        throw ConfigError("architecture: expected 'dense IN OUT [nobias]', got '" + clause + "'");
      }
      arch.layers.emplace_back(DenseSpec{parse_size(tok[1], clause), parse_size(tok[2], clause),
                                         tok.size() == 3});
    } else if (kind == "conv") {
      if (tok.size() < 4) {
        throw ConfigError("architecture: expected 'conv IN OUT K [sS] [pP] [nobias]', got '" + clause + "'");
      }
      Conv2dSpec conv{parse_size(tok[1], clause), parse_size(tok[2], clause), parse_size(tok[3], clause)};
      for (std::size_t i = 4; i < tok.size(); ++i) {
        if (tok[i] == "nobias") {
          conv.has_bias = false;
        } else if (tok[i].size() > 1 && tok[i][0] == 's') {
          conv.stride = parse_size(tok[i].substr(1), clause);
        } else if (tok[i].size() > 1 && tok[i][0] == 'p') {
          conv.padding = parse_size(tok[i].substr(1), clause);
        } else {
          throw ConfigError("architecture: unknown conv option '" + tok[i] + "'");
        }
      }
      arch.layers.emplace_back(conv);
    } else if (kind == "relu" && tok.size() == 1) {
      arch.layers.emplace_back(ReluSpec{});
    } else if (kind == "flatten" && tok.size() == 1) {
      arch.layers.emplace_back(FlattenSpec{});
    } else if (kind == "bn" && tok.size() == 2) {
      arch.layers.emplace_back(BatchNormSpec{parse_size(tok[1], clause)});
    } else {
      throw ConfigError("architecture: cannot parse clause '" + clause + "'");
    }
  }
  if (!saw_input) throw ConfigError("architecture: missing 'in' clause");
  return arch;
}

Architecture resolve_architecture(std::string_view name) {
  if (name == "mlp_mnist") {
    return parse_architecture("in 1x28x28; flatten; dense 784 128; relu; dense 128 128; relu; dense 128 10");
  }
  if (name == "mlp_blobs") {
    return parse_architecture("in 2; dense 2 32; relu; dense 32 32; relu; dense 32 2");
  }
  if (name == "linear_blobs") return parse_architecture("in 2; dense 2 2");
  if (name == "conv_small") {
    return parse_architecture(
        "in 1x28x28; conv 1 16 4 s2 p1; relu; conv 16 32 4 s2 p1; relu; flatten; "
        "dense 1568 100; relu; dense 100 10");
  }
  if (name == "cnn7_mnist" || name == "cnn7_cifar") {
    const bool mnist = name == "cnn7_mnist";
    const std::size_t ch = mnist ? 1 : 3, side = mnist ? 28 : 32, half = side / 2;
    std::ostringstream text;
    text << "in " << ch << 'x' << side << 'x' << side << "; "
         << "conv " << ch << " 64 3 s1 p1; bn 64; relu; "
         << "conv 64 64 3 s1 p1; bn 64; relu; "
         << "conv 64 128 3 s2 p1; bn 128; relu; "
         << "conv 128 128 3 s1 p1; bn 128; relu; "
         << "conv 128 128 3 s1 p1; bn 128; relu; flatten; "
         << "dense " << 128 * half * half << " 512; bn 512; relu; dense 512 10";
    return parse_architecture(text.str());
  }
  return parse_architecture(name);
}

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::Weight: return "weight";
    case ParamRole::Bias: return "bias";
    case ParamRole::BnGamma: return "bn_gamma";
    case ParamRole::BnBeta: return "bn_beta";
  }
  return "?";
}

std::vector<Shape> infer_shapes(const Architecture& arch) {
  if (arch.input_shape.empty() || shape_numel(arch.input_shape) == 0) {
    throw ShapeError("architecture: input shape must be non-empty");
  }
  if (arch.layers.empty()) throw ShapeError("architecture: no layers");
  std::vector<Shape> shapes;
  Shape current = arch.input_shape;
  auto mismatch = [&](std::size_t i, const std::string& expected) {
    const std::string producer =
        i == 0 ? "input " + shape_str(arch.input_shape)
               : "layer " + std::to_string(i - 1) + " (" + describe(arch.layers[i - 1]) + ") output " +
                     shape_str(current);
    return ShapeError("incompatible layers: " + producer + " cannot feed layer " + std::to_string(i) +
                      " (" + describe(arch.layers[i]) + ") expecting " + expected);
  };
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](const DenseSpec& d) {
                     if (d.in == 0 || d.out == 0) throw ShapeError("dense layer with zero extent");
                     if (current != Shape{d.in}) throw mismatch(i, shape_str({d.in}));
                     current = {d.out};
                   },
                   [&](const Conv2dSpec& c) {
                     if (current.size() != 3 || current[0] != c.in_channels) {
                       throw mismatch(i, "[" + std::to_string(c.in_channels) + ", H, W]");
                     }
                     const Shape out = conv2d_output_shape({1, current[0], current[1], current[2]},
                                                           {c.out_channels, c.in_channels, c.kernel, c.kernel},
                                                           {c.stride, c.padding});
                     current = {out[1], out[2], out[3]};
                   },
                   [&](const ReluSpec&) {},
                   [&](const FlattenSpec&) { current = {shape_numel(current)}; },
                   [&](const BatchNormSpec& b) {
                     if ((current.size() != 1 && current.size() != 3) || current[0] != b.features) {
                       throw mismatch(i, "[" + std::to_string(b.features) + ", ...]");
                     }
                   },
               },
               arch.layers[i]);
    shapes.push_back(current);
  }
  if (current.size() != 1) {
    throw ShapeError("architecture: final output must be a vector of logits, got " + shape_str(current));
  }
  return shapes;
}

// --- Network --------------------------------------------------------------

void Network::layout_params() {
  shapes_ = infer_shapes(arch_);
  params_.clear();
  bn_slots_.assign(arch_.layers.size(), std::nullopt);
  std::size_t bn_count = 0;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    std::visit(Overloaded{
                   [&](const DenseSpec& d) {
                     params_.push_back({i, ParamRole::Weight, Tensor({d.out, d.in}), 0});
                     if (d.has_bias) params_.push_back({i, ParamRole::Bias, Tensor({d.out}), 0});
                   },
                   [&](const Conv2dSpec& c) {
                     params_.push_back({i, ParamRole::Weight,
                                        Tensor({c.out_channels, c.in_channels, c.kernel, c.kernel}), 0});
                     if (c.has_bias) params_.push_back({i, ParamRole::Bias, Tensor({c.out_channels}), 0});
                   },
                   [&](const BatchNormSpec& b) {
                     params_.push_back({i, ParamRole::BnGamma, Tensor({b.features}, 1.0), 0});
                     params_.push_back({i, ParamRole::BnBeta, Tensor({b.features}), 0});
                     bn_slots_[i] = bn_count++;
                   },
                   [](const auto&) {},
               },
               arch_.layers[i]);
  }
  num_params_ = 0;
  for (ParamTensor& p : params_) {
    p.flat_offset = num_params_;
    num_params_ += p.value.numel();
  }
  bn_stats_.clear();
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    if (const auto* bn = std::get_if<BatchNormSpec>(&arch_.layers[i])) {
      bn_stats_.push_back({Tensor({bn->features}, 0.0), Tensor({bn->features}, 1.0)});
    }
  }
}

Network Network::build(Architecture arch, std::uint64_t seed) {
  Network net;
  net.arch_ = std::move(arch);
  net.layout_params();
  Rng rng(seed);
  for (ParamTensor& p : net.params_) {
    if (p.role != ParamRole::Weight) continue;
    const Shape& s = p.value.shape();
    const std::size_t fan_in = s.size() == 2 ? s[1] : s[1] * s[2] * s[3];
    kaiming_uniform(p.value, fan_in, rng);
  }
  return net;
}

Network Network::from_parts(Architecture arch, std::span<const double> flat_params,
                            std::vector<BnStats> bn_stats) {
  Network net;
  net.arch_ = std::move(arch);
  net.layout_params();
  net.set_flat_params(flat_params);
  if (bn_stats.size() != net.bn_stats_.size()) {
    throw ShapeError("Network::from_parts: " + std::to_string(bn_stats.size()) +
                     " BN stat blocks for " + std::to_string(net.bn_stats_.size()) + " BN layers");
  }
  for (std::size_t i = 0; i < bn_stats.size(); ++i) {
    if (bn_stats[i].mean.shape() != net.bn_stats_[i].mean.shape() ||
        bn_stats[i].var.shape() != net.bn_stats_[i].var.shape()) {
      throw ShapeError("Network::from_parts: BN stats shape mismatch at block " + std::to_string(i));
    }
    for (double v : bn_stats[i].var.data()) {
      if (!(v > 0.0)) throw ShapeError("Network::from_parts: BN running variance must be positive");
    }
  }
  net.bn_stats_ = std::move(bn_stats);
  return net;
}

std::size_t Network::num_classes() const { return output_shape()[0]; }

std::vector<double> Network::flat_params() const {
  std::vector<double> flat;
  flat.reserve(num_params_);
  for (const ParamTensor& p : params_) flat.insert(flat.end(), p.value.data().begin(), p.value.data().end());
  return flat;
}

void Network::set_flat_params(std::span<const double> values) {
  if (values.size() != num_params_) {
    throw ShapeError("set_flat_params: " + std::to_string(values.size()) + " values for " +
                     std::to_string(num_params_) + " parameters");
  }
  for (ParamTensor& p : params_) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(p.flat_offset), p.value.numel(),
                p.value.data().begin());
  }
}

ParamId Network::param_id(std::size_t flat_index) const {
  if (flat_index >= num_params_) throw Error("param_id: flat index out of range");
  auto it = std::upper_bound(params_.begin(), params_.end(), flat_index,
                             [](std::size_t idx, const ParamTensor& p) { return idx < p.flat_offset; });
  const ParamTensor& p = *std::prev(it);
  return {p.layer, p.role, flat_index - p.flat_offset};
}

std::size_t Network::flat_index(const ParamId& id) const {
  const auto idx = find_param(id.layer, id.role);
  if (!idx || id.offset >= params_[*idx].value.numel()) {
    throw Error("flat_index: no parameter at layer " + std::to_string(id.layer) + " role " +
                std::string(role_name(id.role)) + " offset " + std::to_string(id.offset));
  }
  return params_[*idx].flat_offset + id.offset;
}

std::optional<std::size_t> Network::find_param(std::size_t layer, ParamRole role) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].layer == layer && params_[i].role == role) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> Network::bn_slot(std::size_t layer) const {
  return layer < bn_slots_.size() ? bn_slots_[layer] : std::nullopt;
}

// --- views and binding ----------------------------------------------------

NetworkView::NetworkView(const Network& net, std::span<const double> mask, std::span<const double> offset)
    : net_(&net), mask_(mask), offset_(offset) {
  if (!mask_.empty() && mask_.size() != net.num_params()) {
    throw ShapeError("NetworkView: mask has " + std::to_string(mask_.size()) + " entries for " +
                     std::to_string(net.num_params()) + " parameters");
  }
  if (!offset_.empty() && offset_.size() != net.num_params()) {
    throw ShapeError("NetworkView: offset has " + std::to_string(offset_.size()) + " entries for " +
                     std::to_string(net.num_params()) + " parameters");
  }
}

NetworkView NetworkView::with_offset(std::span<const double> offset) const {
  return NetworkView(*net_, mask_, offset);
}

BoundParams bind_params(Tape& tape, const NetworkView& view, bool requires_grad) {
  BoundParams bound;
  const auto& params = view.net().params();
  bound.leaves.reserve(params.size());
  bound.values.reserve(params.size());
  for (const ParamTensor& p : params) {
    Tensor value = p.value;
    if (!view.offset().empty()) {
      const auto off = view.offset().subspan(p.flat_offset, value.numel());
      for (std::size_t i = 0; i < value.numel(); ++i) value[i] += off[i];
    }
    Var leaf = tape.leaf(std::move(value), requires_grad);
    bound.leaves.push_back(leaf);
    if (view.mask().empty()) {
      bound.values.push_back(leaf);
    } else {
      const auto m = view.mask().subspan(p.flat_offset, p.value.numel());
      Tensor mask_t(p.value.shape(), std::vector<double>(m.begin(), m.end()));
      bound.values.push_back(mul(leaf, tape.constant(std::move(mask_t))));
    }
  }
  return bound;
}

std::vector<double> flat_gradient(const Gradients& grads, const BoundParams& params) {
  std::vector<double> flat;
  for (const Var& leaf : params.leaves) {
    const Tensor& g = grads[leaf];
    flat.insert(flat.end(), g.data().begin(), g.data().end());
  }
  return flat;
}

// --- forward --------------------------------------------------------------

void check_input(const Network& net, const Shape& batch_shape) {
  const Shape& in = net.input_shape();
  if (batch_shape.size() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch_shape.begin() + 1)) {
    throw ShapeError("network input must be [B, " + shape_str(in).substr(1) + ", got " +
                     shape_str(batch_shape));
  }
}

std::pair<Var, Var> batch_norm_affine(Tape& tape, const Network& net, const BoundParams& params,
                                      std::size_t layer, const ForwardOptions& options) {
  const std::size_t slot = net.bn_slot(layer).value();
  const BnStats* stats = nullptr;
  if (options.bn == BnMode::Frozen) {
    if (!options.frame || slot >= options.frame->stats.size()) {
      throw Error("frozen BatchNorm requested without recorded batch statistics");
    }
    stats = &options.frame->stats[slot];
  } else {
    stats = &net.bn_stats()[slot];
  }
  Tensor inv_std(stats->var.shape());
  for (std::size_t c = 0; c < inv_std.numel(); ++c) inv_std[c] = 1.0 / std::sqrt(stats->var[c] + Network::kBnEps);
  const Var gamma = params.values[*net.find_param(layer, ParamRole::BnGamma)];
  const Var beta = params.values[*net.find_param(layer, ParamRole::BnBeta)];
  const Var scale_v = mul(gamma, tape.constant(std::move(inv_std)));
  const Var shift = sub(beta, mul(scale_v, tape.constant(stats->mean)));
  return {scale_v, shift};
}

Var forward(const Network& net, const BoundParams& params, Var x, const ForwardOptions& options) {
  check_input(net, x.shape());
  Tape& tape = *x.tape();
  const std::size_t batch = x.shape()[0];
  if (options.bn == BnMode::BatchStats && options.frame) options.frame->stats.clear();
  Var h = x;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const LayerSpec& layer = net.layers()[i];
    auto value_of = [&](ParamRole role) -> std::optional<Var> {
      const auto idx = net.find_param(i, role);
      if (!idx) return std::nullopt;
      return params.values[*idx];
    };
    std::visit(Overloaded{
                   [&](const DenseSpec&) { h = linear(h, *value_of(ParamRole::Weight), value_of(ParamRole::Bias)); },
                   [&](const Conv2dSpec& c) {
                     h = conv2d(h, *value_of(ParamRole::Weight), value_of(ParamRole::Bias), {c.stride, c.padding});
                   },
                   [&](const ReluSpec&) { h = relu(h); },
                   [&](const FlattenSpec&) { h = reshape(h, {batch, shape_numel(net.activation_shapes()[i])}); },
                   [&](const BatchNormSpec&) {
                     if (options.bn == BnMode::BatchStats) {
                       BnStats stats;
                       h = batch_norm(h, *value_of(ParamRole::BnGamma), *value_of(ParamRole::BnBeta),
                                      Network::kBnEps, &stats.mean, &stats.var);
                       if (options.frame) options.frame->stats.push_back(std::move(stats));
                     } else {
                       auto [s, t] = batch_norm_affine(tape, net, params, i, options);
                       h = channel_affine(h, s, t);
                     }
                   },
               },
               layer);
  }
  return h;
}

Tensor forward(const NetworkView& view, const Tensor& x) {
  Tape tape;
  const BoundParams params = bind_params(tape, view, false);
  return forward(view.net(), params, tape.constant(x)).value();
}

int argmax(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<int>(best);
}

std::vector<int> predict(const NetworkView& view, const Tensor& x) {
  const Tensor logits = forward(view, x);
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = argmax(logits.data().subspan(r * cols, cols));
  return out;
}

void update_running_stats(Network& net, const BnFrame& frame) {
  auto& running = net.bn_stats();
  if (frame.stats.size() != running.size()) {
    throw Error("update_running_stats: frame has " + std::to_string(frame.stats.size()) +
                " blocks, network has " + std::to_string(running.size()));
  }
  const double m = Network::kBnMomentum;
  for (std::size_t i = 0; i < running.size(); ++i) {
    const BnStats& batch = frame.stats[i];
    for (std::size_t c = 0; c < running[i].mean.numel(); ++c) {
      running[i].mean[c] = (1.0 - m) * running[i].mean[c] + m * batch.mean[c];
      running[i].var[c] = (1.0 - m) * running[i].var[c] + m * batch.var[c];
    }
  }
}

}  // namespace cactus
