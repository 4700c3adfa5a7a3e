#include "cactus/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cactus/error.hpp"

namespace cactus::cli {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": '" + v + "' is not a number");
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& s : to_list(v)) out.push_back(to_double(key, s));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

struct KeyInfo {
  std::string default_text;
  std::string help;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
};

const std::map<std::string, KeyInfo>& keys() {
  static const std::map<std::string, KeyInfo> table = {
      {"data.dataset", {"blobs", "blobs | moons | mnist | cifar10",
                        [](RunConfig& c, const std::string&, const std::string& v) { c.dataset = v; }}},
      {"data.path", {"data/mnist-subset", "directory holding the IDX or CIFAR-10 files",
                     [](RunConfig& c, const std::string&, const std::string& v) { c.data_path = v; }}},
      {"data.train_size", {"0", "use the first N training samples (0 = all)",
                           [](RunConfig& c, const std::string& k, const std::string& v) { c.train_size = to_uint(k, v); }}},
      {"data.test_size", {"0", "use the first N test samples (0 = all)",
                          [](RunConfig& c, const std::string& k, const std::string& v) { c.test_size = to_uint(k, v); }}},
      {"data.synthetic_train", {"2000", "synthetic training samples",
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.synthetic_train = to_uint(k, v);
                                }}},
      {"data.synthetic_test", {"1000", "synthetic test samples",
                               [](RunConfig& c, const std::string& k, const std::string& v) {
                                 c.synthetic_test = to_uint(k, v);
                               }}},
      {"data.seed", {"0", "seed of the synthetic data generator",
                     [](RunConfig& c, const std::string& k, const std::string& v) { c.data_seed = to_uint(k, v); }}},
      {"data.noise", {"0.05", "synthetic Gaussian standard deviation",
                      [](RunConfig& c, const std::string& k, const std::string& v) { c.noise = to_double(k, v); }}},
      {"model.arch", {"mlp_blobs", "preset (mlp_mnist, mlp_blobs, linear_blobs, conv_small, cnn7_mnist, cnn7_cifar) or layer text",
                      [](RunConfig& c, const std::string&, const std::string& v) { c.arch = v; }}},
      {"train.epochs", {"1", "training epochs",
                        [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = to_uint(k, v); }}},
      {"train.batch_size", {"16", "samples per batch",
                            [](RunConfig& c, const std::string& k, const std::string& v) {
                              c.train.batch_size = to_uint(k, v);
                            }}},
      {"train.lr", {"1e-4", "Adam learning rate",
                    [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam.lr = to_double(k, v); }}},
      {"train.beta1", {"0.9", "Adam beta1",
                       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam.beta1 = to_double(k, v); }}},
      {"train.beta2", {"0.999", "Adam beta2",
                       [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam.beta2 = to_double(k, v); }}},
      {"train.adam_eps", {"1e-8", "Adam epsilon",
                          [](RunConfig& c, const std::string& k, const std::string& v) { c.train.adam.eps = to_double(k, v); }}},
      {"train.weight_decay", {"1e-5", "L2 penalty added to the gradient",
                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                c.train.adam.weight_decay = to_double(k, v);
                              }}},
      {"train.warmup_iters", {"250", "iterations of standard loss only",
                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                c.train.schedule.warmup_iters = to_uint(k, v);
                              }}},
      {"train.ramp_iters", {"250", "iterations over which lambda and epsilon ramp",
                            [](RunConfig& c, const std::string& k, const std::string& v) {
                              c.train.schedule.ramp_iters = to_uint(k, v);
                            }}},
      {"train.lambda_final", {"0.75", "standard-loss weight after the ramp",
                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                c.train.schedule.lambda_final = to_double(k, v);
                              }}},
      {"train.update_per_element", {"false", "one optimizer step per compression-set element",
                                    [](RunConfig& c, const std::string& k, const std::string& v) {
                                      c.train.update_per_element = to_bool(k, v);
                                    }}},
      {"attack.epsilon", {"0.05", "training radius",
                          [](RunConfig& c, const std::string& k, const std::string& v) {
                            c.train.attack.epsilon = to_double(k, v);
                          }}},
      {"attack.tau_ratio", {"0.4", "SABR box radius as a fraction of epsilon",
                            [](RunConfig& c, const std::string& k, const std::string& v) {
                              c.train.tau_ratio = to_double(k, v);
                            }}},
      {"attack.pgd_steps", {"8", "PGD iterations",
                            [](RunConfig& c, const std::string& k, const std::string& v) {
                              c.train.attack.pgd_steps = static_cast<int>(to_uint(k, v));
                            }}},
      {"attack.pgd_step_size", {"0.25", "PGD step as a fraction of the attack radius",
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.train.attack.pgd_step_size = to_double(k, v);
                                }}},
      {"attack.restarts", {"1", "PGD restarts",
                           [](RunConfig& c, const std::string& k, const std::string& v) {
                             c.train.attack.restarts = static_cast<int>(to_uint(k, v));
                           }}},
      {"awp.eta", {"0.25", "weight-perturbation radius",
                   [](RunConfig& c, const std::string& k, const std::string& v) { c.awp.eta = to_double(k, v); }}},
      {"awp.steps", {"1", "signed-ascent steps",
                     [](RunConfig& c, const std::string& k, const std::string& v) {
                       c.awp.steps = static_cast<int>(to_uint(k, v));
                     }}},
      {"compression.set", {"identity", "identity | sampled | fixed | progressive",
                           [](RunConfig& c, const std::string& k, const std::string& v) {
                             if (v != "identity" && v != "sampled" && v != "fixed" && v != "progressive") {
                               throw ConfigError(k + ": unknown set '" + v + "'");
                             }
                             c.set = v;
                           }}},
      {"compression.method", {"GUl1", "pruning method used during training",
                              [](RunConfig& c, const std::string&, const std::string& v) { c.method = v; }}},
      {"compression.ratio_lo", {"0.25", "lower pruning ratio (sampled, progressive)",
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.ratio_lo = to_double(k, v);
                                }}},
      {"compression.ratio_hi", {"0.75", "upper pruning ratio (sampled, progressive)",
                                [](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.ratio_hi = to_double(k, v);
                                }}},
      {"compression.count", {"1", "pruned networks sampled per batch",
                             [](RunConfig& c, const std::string& k, const std::string& v) { c.count = to_uint(k, v); }}},
      {"compression.ratios", {"0.25,0.5,0.75", "pruning ratios of the fixed set",
                              [](RunConfig& c, const std::string& k, const std::string& v) {
                                c.ratios = to_doubles(k, v);
                              }}},
      {"compression.quant_proxy", {"false", "add the AWP quantization proxy element",
                                   [](RunConfig& c, const std::string& k, const std::string& v) {
                                     c.quant_proxy = to_bool(k, v);
                                   }}},
      {"eval.epsilon", {"0.05", "comma-separated certification radii",
                        [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_eps = to_doubles(k, v); }}},
      {"eval.variants", {"none", "comma-separated variants: none, prune:<method>:<ratio>, int8, int4, quant:<bits>",
                         [](RunConfig& c, const std::string& k, const std::string& v) {
                           c.variants = to_list(v);
                           if (c.variants.empty()) throw ConfigError(k + ": empty list");
                         }}},
      {"run.seed", {"0", "master seed",
                    [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_uint(k, v); }}},
      {"run.out", {"runs/default", "output directory",
                   [](RunConfig& c, const std::string&, const std::string& v) { c.out = v; }}},
  };
  return table;
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (!out.emplace(full, trim(std::string_view(line).substr(eq + 1))).second) {
      throw ConfigError(where + ": duplicate key '" + full + "'");
    }
  }
  return out;
}

RunConfig::RunConfig() {
  train.attack.epsilon = 0.05;
}

void RunConfig::set_value(const std::string& key, const std::string& value) {
  const auto it = keys().find(key);
  if (it == keys().end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second.set(*this, key, value);
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) set_value(k, v);
}

CompressionSet RunConfig::compression_set() const {
  CompressionSet s;
  if (set == "identity") {
    s = identity_set();
  } else {
    const PruneSpec spec = parse_prune_method(method);
    if (set == "sampled") {
      s = sampled_prune_set(spec, ratio_lo, ratio_hi, count);
    } else if (set == "fixed") {
      s = fixed_prune_set(spec, ratios);
    } else if (set == "progressive") {
      s = progressive_prune_set(spec, ratio_lo, ratio_hi);
    } else {
      throw ConfigError("compression.set: unknown strategy '" + set + "'");
    }
  }
  if (quant_proxy) s.add_quant_proxy(awp);
  s.validate();
  return s;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train;
  t.seed = seed;
  t.out_dir = out;
  t.validate();
  return t;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  cfg.apply(parse_config_text(ss.str(), path.string()));
  return cfg;
}

std::vector<std::vector<std::string>> config_reference() {
  std::vector<std::vector<std::string>> rows;
  for (const auto& [k, info] : keys()) rows.push_back({k, info.default_text, info.help});
  return rows;
}

}  // namespace cactus::cli
