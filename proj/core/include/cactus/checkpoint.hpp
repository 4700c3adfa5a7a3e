#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cactus/network.hpp"

namespace cactus {

// Little-endian encoder for checkpoint section payloads.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void str(const std::string& s);
  void raw(std::span<const std::uint8_t> data);

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string context)
      : data_(data), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s();
  std::string str();
  std::span<const std::uint8_t> raw(std::size_t n);

  bool done() const { return pos_ == data_.size(); }
  void expect_done() const;

 private:
  void need(std::size_t n) const;

  std::span<const std::uint8_t> data_;
  std::string context_;
  std::size_t pos_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout (all integers little-endian):
//   "CACTUSCK" | u32 version | u32 section count | sections...
//   section = 4-byte ASCII tag | u64 payload length | payload
// Required sections: ARCH, PARM, BNST, SEED, RNGS, ITER. Anything else (TRST,
// MASK, QSPC, ...) is carried through `sections` untouched.
struct Checkpoint {
  Network network;
  std::uint64_t seed = 0;
  std::string rng_state;
  std::uint64_t iteration = 0;
  std::map<std::string, std::vector<std::uint8_t>> sections;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Convenience for checkpoints holding only a network.
Checkpoint make_checkpoint(const Network& net, std::uint64_t seed = 0);

}  // namespace cactus
