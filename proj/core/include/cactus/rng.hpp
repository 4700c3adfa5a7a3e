#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cactus {

// All randomness flows through mt19937_64, whose output sequence is fixed by
// the standard. The std:: distributions are implementation-defined, so the
// draws below are computed by hand to keep runs reproducible across builds.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
/// Standard normal via Box-Muller (one draw per call, second value discarded).
double standard_normal(Rng& rng);
/// Uniform integer in [0, n).
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

/// Derives an independent seed from (base, stream) with splitmix64.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

std::string rng_state(const Rng& rng);
void restore_rng_state(Rng& rng, const std::string& state);

}  // namespace cactus
