#include "cactus/cli/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <sstream>

#include "cactus/error.hpp"
#include "cactus/ops.hpp"

namespace cactus::cli {
namespace {

constexpr std::size_t kChunk = 256;

// Shortest text that reads back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

double parse_number(const std::string& text, const std::string& context) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty()) throw ConfigError(context + ": '" + text + "' is not a number");
  return v;
}

template <typename Fn>
void for_chunks(const Batch& data, Fn&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, data.size());
    idx.resize(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
    Batch chunk{data.x.gather_rows(idx), std::vector<int>(data.y.begin() + static_cast<std::ptrdiff_t>(begin),
                                                          data.y.begin() + static_cast<std::ptrdiff_t>(end))};
    fn(begin, chunk);
  }
}

}  // namespace

Variant parse_variant(const std::string& text) {
  Variant v;
  v.label = text;
  if (text == "none") return v;
  if (text == "int8" || text == "int4") {
    v.kind = Variant::Kind::Quant;
    v.bits = text == "int8" ? 8 : 4;
    return v;
  }
  if (text.rfind("quant:", 0) == 0) {
    v.kind = Variant::Kind::Quant;
    const double bits = parse_number(text.substr(6), "variant '" + text + "'");
    if (bits != static_cast<int>(bits) || bits < 2 || bits > 32) {
      throw ConfigError("variant '" + text + "': bits must be an integer in [2, 32]");
    }
    v.bits = static_cast<int>(bits);
    return v;
  }
  if (text.rfind("prune:", 0) == 0) {
    const auto colon = text.find(':', 6);
    if (colon == std::string::npos) throw ConfigError("variant '" + text + "': expected prune:<method>:<ratio>");
    v.kind = Variant::Kind::Prune;
    v.prune = parse_prune_method(text.substr(6, colon - 6),
                                 parse_number(text.substr(colon + 1), "variant '" + text + "'"));
    v.prune.validate();
    return v;
  }
  throw ConfigError("unknown variant '" + text + "' (expected none, prune:<method>:<ratio>, int8, int4, quant:<bits>)");
}

std::vector<double> clean_gradient(const Network& net, const Batch& data) {
  std::vector<double> grad(net.num_params(), 0.0);
  for_chunks(data, [&](std::size_t, const Batch& chunk) {
    Tape tape;
    const BoundParams params = bind_params(tape, NetworkView(net), true);
    const Var loss = sum(softmax_cross_entropy(forward(net, params, tape.constant(chunk.x)), chunk.y));
    const auto g = flat_gradient(tape.backward(loss), params);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  });
  for (double& g : grad) g /= static_cast<double>(std::max<std::size_t>(data.size(), 1));
  return grad;
}

Network materialize_variant(const Network& net, const Variant& variant, const Batch& data) {
  try {
    switch (variant.kind) {
      case Variant::Kind::None:
        return net;
      case Variant::Kind::Prune: {
        std::vector<double> grads;
        if (variant.prune.score == PruneScore::GradMag) grads = clean_gradient(net, data);
        return materialize(apply_mask(net, compute_mask(net, variant.prune, grads)));
      }
      case Variant::Kind::Quant:
        return quantize_weights(net, variant.bits, QuantGranularity::PerLayer);
    }
  } catch (const ConfigError& e) {
    throw ConfigError("variant '" + variant.label + "': " + e.what());
  }
  return net;
}

double EvalRow::standard_acc() const { return n == 0 ? 0.0 : 100.0 * static_cast<double>(standard_correct) / n; }
double EvalRow::certified_acc() const { return n == 0 ? 0.0 : 100.0 * static_cast<double>(certified_correct) / n; }

std::vector<SampleVerdict> certify_samples(const Network& net, const Batch& data, double epsilon) {
  std::vector<SampleVerdict> out(data.size());
  for_chunks(data, [&](std::size_t begin, const Batch& chunk) {
    const auto preds = predict(NetworkView(net), chunk.x);
    const auto verdicts = certify(NetworkView(net), chunk.x, chunk.y, epsilon);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      out[begin + i] = {chunk.y[i], preds[i], verdicts[i] == Verdict::Certified};
    }
  });
  return out;
}

std::string verdicts_csv(const std::vector<SampleVerdict>& verdicts) {
  std::string s = "index,label,pred,certified\n";
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    s += std::to_string(i) + "," + std::to_string(verdicts[i].label) + "," + std::to_string(verdicts[i].pred) + "," +
         (verdicts[i].certified ? "1" : "0") + "\n";
  }
  return s;
}

EvalRow evaluate_network(const Network& net, const Batch& data, double epsilon, const std::string& label) {
  EvalRow row{label, epsilon, data.size(), 0, 0};
  for (const SampleVerdict& v : certify_samples(net, data, epsilon)) {
    if (v.pred == v.label) {
      ++row.standard_correct;
      if (v.certified) ++row.certified_correct;
    }
  }
  return row;
}

EvalReport evaluate(const Network& net, const Batch& data, const std::vector<double>& epsilons,
                    const std::vector<Variant>& variants) {
  EvalReport report;
  for (const Variant& v : variants) {
    const Network compressed = materialize_variant(net, v, data);
    for (double eps : epsilons) report.rows.push_back(evaluate_network(compressed, data, eps, v.label));
  }
  return report;
}

std::string EvalReport::csv() const {
  std::string s = "certifier,variant,epsilon,n,standard_correct,standard_acc,certified_correct,certified_acc\n";
  for (const EvalRow& r : rows) {
    s += certifier + "," + r.variant + "," + shortest(r.epsilon) + "," + std::to_string(r.n) + "," +
         std::to_string(r.standard_correct) + "," + shortest(r.standard_acc()) + "," +
         std::to_string(r.certified_correct) + "," + shortest(r.certified_acc()) + "\n";
  }
  return s;
}

std::string EvalReport::table() const {
  const std::vector<std::string> head{"variant", "epsilon", "n", "standard %", "certified % (" + certifier + ")"};
  std::vector<std::vector<std::string>> cells{head};
  for (const EvalRow& r : rows) {
    cells.push_back({r.variant, fmt("%g", r.epsilon), std::to_string(r.n), fmt("%.2f", r.standard_acc()),
                     fmt("%.2f", r.certified_acc())});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  out << "certifier: " << certifier << " (interval bound propagation; sound, incomplete)\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& cell = cells[r][c];
      const std::string pad(width[c] - cell.size(), ' ');
      out << (c == 0 ? cell + pad : pad + cell) << (c + 1 < cells[r].size() ? "  " : "\n");
    }
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << "\n";
    }
  }
  return out.str();
}

}  // namespace cactus::cli
