#pragma once

#include <iosfwd>

#include "cactus/cli/config.hpp"
#include "cactus/cli/dataset.hpp"

namespace cactus::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kIo = 2,
  kConfig = 3,
  kDiverged = 4,
};

Dataset load_dataset(const RunConfig& cfg);

/// Entry point of the `cactus` tool: train | prune | quantize | certify | eval.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cactus::cli
