#include "cactus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cactus/error.hpp"

namespace cactus {
namespace {

constexpr char kMagic[8] = {'C', 'A', 'C', 'T', 'U', 'S', 'C', 'K'};
const char* const kRequired[] = {"ARCH", "PARM", "BNST", "SEED", "RNGS", "ITER"};

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  return v;
}

std::vector<std::uint8_t> encode_bn(const std::vector<BnStats>& stats) {
  ByteWriter w;
  w.u64(stats.size());
  for (const BnStats& s : stats) {
    w.u64(s.mean.numel());
    w.f64s(s.mean.data());
    w.f64s(s.var.data());
  }
  return w.take();
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) { put_le(bytes_, v); }
void ByteWriter::u64(std::uint64_t v) { put_le(bytes_, v); }
void ByteWriter::f64(double v) { put_le(bytes_, std::bit_cast<std::uint64_t>(v)); }
void ByteWriter::f64s(std::span<const double> values) {
  for (double v : values) f64(v);
}
void ByteWriter::str(const std::string& s) {
  u64(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}
void ByteWriter::raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw IoError(context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                  std::to_string(pos_) + ", have " + std::to_string(data_.size() - pos_) + ")");
  }
}
std::uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}
std::uint32_t ByteReader::u32() {
  need(4);
  const auto v = get_le<std::uint32_t>(data_.data() + pos_);
  pos_ += 4;
  return v;
}
std::uint64_t ByteReader::u64() {
  need(8);
  const auto v = get_le<std::uint64_t>(data_.data() + pos_);
  pos_ += 8;
  return v;
}
double ByteReader::f64() { return std::bit_cast<double>(u64()); }
std::vector<double> ByteReader::f64s() {
  const std::uint64_t n = u64();
  need(n * 8);
  std::vector<double> out(n);
  for (double& v : out) v = f64();
  return out;
}
std::string ByteReader::str() {
  const std::uint64_t n = u64();
  need(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}
std::span<const std::uint8_t> ByteReader::raw(std::size_t n) {
  need(n);
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}
void ByteReader::expect_done() const {
  if (!done()) throw IoError(context_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::vector<std::uint8_t>> sections = ckpt.sections;
  {
    ByteWriter w;
    w.str(format_architecture(ckpt.network.architecture()));
    sections["ARCH"] = w.take();
  }
  {
    ByteWriter w;
    const auto flat = ckpt.network.flat_params();
    w.u64(flat.size());
    w.f64s(flat);
    sections["PARM"] = w.take();
  }
  sections["BNST"] = encode_bn(ckpt.network.bn_stats());
  {
    ByteWriter w;
    w.u64(ckpt.seed);
    sections["SEED"] = w.take();
  }
  {
    ByteWriter w;
    w.str(ckpt.rng_state);
    sections["RNGS"] = w.take();
  }
  {
    ByteWriter w;
    w.u64(ckpt.iteration);
    sections["ITER"] = w.take();
  }

  ByteWriter out;
  out.raw({reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic)});
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, payload] : sections) {
    if (tag.size() != 4) throw IoError("checkpoint section tag must be 4 characters: '" + tag + "'");
    out.raw({reinterpret_cast<const std::uint8_t*>(tag.data()), 4});
    out.u64(payload.size());
    out.raw(payload);
  }
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes, "checkpoint");
  const auto magic = in.raw(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("checkpoint: bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  std::map<std::string, std::vector<std::uint8_t>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto tag_bytes = in.raw(4);
    std::string tag(reinterpret_cast<const char*>(tag_bytes.data()), 4);
    const std::uint64_t len = in.u64();
    const auto payload = in.raw(len);
    sections[tag].assign(payload.begin(), payload.end());
  }
  in.expect_done();
  for (const char* tag : kRequired) {
    if (!sections.contains(tag)) throw IoError(std::string("checkpoint: missing section ") + tag);
  }

  ByteReader arch_in(sections["ARCH"], "checkpoint ARCH");
  Architecture arch = parse_architecture(arch_in.str());
  arch_in.expect_done();

  ByteReader parm_in(sections["PARM"], "checkpoint PARM");
  const std::vector<double> flat = parm_in.f64s();
  parm_in.expect_done();

  ByteReader bn_in(sections["BNST"], "checkpoint BNST");
  std::vector<BnStats> bn(bn_in.u64());
  for (BnStats& s : bn) {
    const std::uint64_t n = bn_in.u64();
    std::vector<double> mean(n), var(n);
    for (double& v : mean) v = bn_in.f64();
    for (double& v : var) v = bn_in.f64();
    s.mean = Tensor({n}, std::move(mean));
    s.var = Tensor({n}, std::move(var));
  }
  bn_in.expect_done();

  Checkpoint ckpt{Network::from_parts(std::move(arch), flat, std::move(bn)), 0, "", 0, {}};
  ByteReader seed_in(sections["SEED"], "checkpoint SEED");
  ckpt.seed = seed_in.u64();
  ByteReader rng_in(sections["RNGS"], "checkpoint RNGS");
  ckpt.rng_state = rng_in.str();
  ByteReader iter_in(sections["ITER"], "checkpoint ITER");
  ckpt.iteration = iter_in.u64();
  for (const char* tag : kRequired) sections.erase(tag);
  ckpt.sections = std::move(sections);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Network& net, std::uint64_t seed) {
  return Checkpoint{net, seed, "", 0, {}};
}

}  // namespace cactus
