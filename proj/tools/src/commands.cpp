#include "cactus/cli/commands.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>

#include "cactus/checkpoint.hpp"
#include "cactus/cli/evaluate.hpp"
#include "cactus/error.hpp"
#include "cactus/train.hpp"

namespace cactus::cli {
namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "configuration file");
  cmd->add_option("--seed", c.seed, "master seed (overrides run.seed)");
  cmd->add_option("--out", c.out, "output directory (overrides run.out)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

void check_compatible(const Network& net, const Dataset& data) {
  if (net.input_shape() != data.input_shape) {
    throw ConfigError("network input " + shape_str(net.input_shape()) + " does not match dataset '" + data.name +
                      "' input " + shape_str(data.input_shape));
  }
  if (net.num_classes() != data.classes) {
    throw ConfigError("network has " + std::to_string(net.num_classes()) + " outputs but dataset '" + data.name +
                      "' has " + std::to_string(data.classes) + " classes");
  }
}

const Batch& split_of(const Dataset& data, const std::string& split) {
  if (split == "test") return data.test;
  if (split == "train") return data.train;
  throw ConfigError("unknown split '" + split + "' (expected train or test)");
}

int cmd_train(const Common& common, const std::string& resume, std::ostream& out) {
  const RunConfig cfg = resolve(common);
  const Dataset data = load_dataset(cfg);
  Network net = Network::build(resolve_architecture(cfg.arch), cfg.seed);
  check_compatible(net, data);
  Trainer trainer(net, data.train, cfg.train_config(), cfg.compression_set());
  if (!resume.empty()) trainer.resume(load_checkpoint(resume));
  const std::size_t batches = (data.train.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  trainer.run([&](const MetricsRow& row) {
    if (row.iter % batches == 0) {
      out << "epoch " << row.epoch << " iter " << row.iter << " lambda " << row.lambda << " eps " << row.eps
          << " loss " << row.loss_total << "\n";
    }
  });
  const EvalRow clean = evaluate_network(net, data.test, 0.0, "none");
  out << "test accuracy " << clean.standard_acc() << "% (" << clean.standard_correct << "/" << clean.n << ")\n";
  out << "checkpoint " << (cfg.out / "last.bin").string() << "\n";
  return kOk;
}

int cmd_prune(const Common& common, const std::string& ckpt_path, const std::string& method, double ratio,
              std::ostream& out) {
  const RunConfig cfg = resolve(common);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  const PruneSpec spec = parse_prune_method(method, ratio);
  std::vector<double> grads;
  if (spec.score == PruneScore::GradMag) {
    const Dataset data = load_dataset(cfg);
    check_compatible(ckpt.network, data);
    grads = clean_gradient(ckpt.network, data.train);
  }
  const PruningMask mask = compute_mask(ckpt.network, spec, grads);
  ckpt.network = materialize(apply_mask(ckpt.network, mask));
  ckpt.sections["MASK"] = encode_mask(mask);
  const auto path = cfg.out / "pruned.bin";
  std::filesystem::create_directories(cfg.out);
  save_checkpoint(path, ckpt);
  out << prune_method_code(spec) << " ratio " << ratio << ": pruned " << mask.pruned_count << " of "
      << mask.target_count << " target parameters\n";
  out << "checkpoint " << path.string() << "\n";
  return kOk;
}

int cmd_quantize(const Common& common, const std::string& ckpt_path, int bits, const std::string& granularity,
                 std::ostream& out) {
  const RunConfig cfg = resolve(common);
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  QuantGranularity g = QuantGranularity::PerLayer;
  if (granularity == "tensor") g = QuantGranularity::PerTensor;
  else if (granularity != "layer") throw ConfigError("granularity must be layer or tensor");
  const QuantPlan plan = calibrate_network(ckpt.network, bits, g);
  ckpt.network = quantize_weights(ckpt.network, plan);
  ckpt.sections["QSPC"] = encode_quant_plan(plan);
  const auto path = cfg.out / "quantized.bin";
  std::filesystem::create_directories(cfg.out);
  save_checkpoint(path, ckpt);
  out << bits << "-bit " << granularity << " quantization, " << plan.entries.size() << " specs\n";
  out << "checkpoint " << path.string() << "\n";
  return kOk;
}

int cmd_certify(const Common& common, const std::string& ckpt_path, std::optional<double> eps,
                const std::string& split, std::ostream& out) {
  const RunConfig cfg = resolve(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(cfg);
  check_compatible(ckpt.network, data);
  const double epsilon = eps.value_or(cfg.eval_eps.front());
  const auto verdicts = certify_samples(ckpt.network, split_of(data, split), epsilon);
  const auto path = cfg.out / "certify.csv";
  write_text(path, verdicts_csv(verdicts));
  std::size_t certified = 0;
  for (const auto& v : verdicts) certified += v.certified ? 1 : 0;
  out << "IBP-certified " << certified << " of " << verdicts.size() << " samples at epsilon " << epsilon << "\n";
  out << "verdicts " << path.string() << "\n";
  return kOk;
}

int cmd_eval(const Common& common, const std::string& ckpt_path, const std::vector<double>& eps,
             const std::vector<std::string>& variant_texts, const std::string& split, std::ostream& out) {
  const RunConfig cfg = resolve(common);
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = load_dataset(cfg);
  check_compatible(ckpt.network, data);
  std::vector<Variant> variants;
  for (const std::string& v : variant_texts.empty() ? cfg.variants : variant_texts) variants.push_back(parse_variant(v));
  const EvalReport report = evaluate(ckpt.network, split_of(data, split), eps.empty() ? cfg.eval_eps : eps, variants);
  write_text(cfg.out / "eval.csv", report.csv());
  write_text(cfg.out / "eval.txt", report.table());
  out << report.table();
  return kOk;
}

}  // namespace

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.dataset == "mnist") return load_mnist(cfg.data_path, cfg.train_size, cfg.test_size);
  if (cfg.dataset == "cifar10") return load_cifar10(cfg.data_path, cfg.train_size, cfg.test_size);
  return make_synthetic_dataset(parse_synthetic_kind(cfg.dataset), cfg.synthetic_train, cfg.synthetic_test, cfg.noise,
                                cfg.data_seed);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compression-aware certified training"};
  app.name("cactus");
  app.require_subcommand(1);

  Common common;
  std::string ckpt, method = "GUl1", granularity = "layer", split = "test", resume;
  double ratio = 0.5;
  int bits = 8;
  std::optional<double> eps;
  std::vector<double> eps_list;
  std::vector<std::string> variants;

  auto* train = app.add_subcommand("train", "train a network with the CACTUS loss");
  add_common(train, common);
  train->add_option("--resume", resume, "checkpoint to continue from");

  auto* prune = app.add_subcommand("prune", "prune a checkpoint and write the masked network");
  add_common(prune, common);
  prune->add_option("--checkpoint", ckpt, "input checkpoint")->required();
  prune->add_option("--method", method, "pruning method, e.g. GUl1, LUl1, GSl2");
  prune->add_option("--ratio", ratio, "fraction of target parameters to remove")->required();

  auto* quantize = app.add_subcommand("quantize", "quantize the weights of a checkpoint");
  add_common(quantize, common);
  quantize->add_option("--checkpoint", ckpt, "input checkpoint")->required();
  quantize->add_option("--bits", bits, "bit width")->check(CLI::Range(2, 32));
  quantize->add_option("--granularity", granularity, "layer or tensor");

  auto* certify_cmd = app.add_subcommand("certify", "per-sample IBP verdicts");
  add_common(certify_cmd, common);
  certify_cmd->add_option("--checkpoint", ckpt, "checkpoint to certify")->required();
  certify_cmd->add_option("--eps", eps, "certification radius (default: first eval.epsilon)");
  certify_cmd->add_option("--split", split, "train or test");

  auto* eval = app.add_subcommand("eval", "standard and certified accuracy per compression variant");
  add_common(eval, common);
  eval->add_option("--checkpoint", ckpt, "checkpoint to evaluate")->required();
  eval->add_option("--eps", eps_list, "certification radius (repeatable)");
  eval->add_option("--variant", variants, "none | prune:<method>:<ratio> | int8 | int4 | quant:<bits> (repeatable)");
  eval->add_option("--split", split, "train or test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(common, resume, out);
    if (*prune) return cmd_prune(common, ckpt, method, ratio, out);
    if (*quantize) return cmd_quantize(common, ckpt, bits, granularity, out);
    if (*certify_cmd) return cmd_certify(common, ckpt, eps, split, out);
    if (*eval) return cmd_eval(common, ckpt, eps_list, variants, split, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

}  // namespace cactus::cli
