#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cactus/bounds.hpp"
#include "cactus/compress.hpp"
#include "cactus/network.hpp"

namespace cactus::cli {

struct Variant {
  enum class Kind { None, Prune, Quant };
  Kind kind = Kind::None;
  std::string label = "none";
  PruneSpec prune;
  int bits = 8;
};

/// none | prune:<method>:<ratio> | int8 | int4 | quant:<bits>
Variant parse_variant(const std::string& text);

/// Mean cross-entropy gradient over `data`, used for gradient-magnitude scores.
std::vector<double> clean_gradient(const Network& net, const Batch& data);

/// The compressed network a variant describes. `data` supplies the gradient
/// snapshot when the pruning score needs one.
Network materialize_variant(const Network& net, const Variant& variant, const Batch& data);

struct EvalRow {
  std::string variant;
  double epsilon = 0.0;
  std::size_t n = 0;
  std::size_t standard_correct = 0;
  std::size_t certified_correct = 0;

  double standard_acc() const;
  double certified_acc() const;
};

struct EvalReport {
  std::string certifier = "IBP";
  std::vector<EvalRow> rows;

  std::string csv() const;
  std::string table() const;
};

struct SampleVerdict {
  int label = 0;
  int pred = 0;
  bool certified = false;
};

/// Prediction and IBP verdict per sample, evaluated in chunks.
std::vector<SampleVerdict> certify_samples(const Network& net, const Batch& data, double epsilon);
std::string verdicts_csv(const std::vector<SampleVerdict>& verdicts);

/// Certified means IBP-certified and correctly classified.
EvalRow evaluate_network(const Network& net, const Batch& data, double epsilon, const std::string& label);
EvalReport evaluate(const Network& net, const Batch& data, const std::vector<double>& epsilons,
                    const std::vector<Variant>& variants);

}  // namespace cactus::cli
