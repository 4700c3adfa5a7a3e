#include "cactus/cli/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cactus/error.hpp"
#include "cactus/rng.hpp"

namespace cactus::cli {
namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) out.insert(out.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IoError("corrupt compressed data in " + path.string());
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& d, std::size_t at) {
  return (std::uint32_t{d[at]} << 24) | (std::uint32_t{d[at + 1]} << 16) | (std::uint32_t{d[at + 2]} << 8) |
         std::uint32_t{d[at + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

void check_header(const std::vector<std::uint8_t>& d, const std::filesystem::path& path, std::size_t header,
                  std::uint32_t magic) {
  if (d.size() < header) {
    throw IoError("truncated IDX file " + path.string() + ": header needs " + std::to_string(header) +
                  " bytes, file has " + std::to_string(d.size()));
  }
  if (be32(d, 0) != magic) {
    throw IoError("bad magic number " + hex(be32(d, 0)) + " in " + path.string() + ", expected " + hex(magic));
  }
}

std::filesystem::path find_file(const std::filesystem::path& dir, const std::string& stem) {
  for (const char* suffix : {"", ".gz"}) {
    const auto p = dir / (stem + suffix);
    if (std::filesystem::exists(p)) return p;
  }
  throw IoError("missing " + stem + "[.gz] in " + dir.string());
}

Batch to_batch(const IdxImages& images, const std::vector<int>& labels, std::size_t limit,
               const std::string& split) {
  if (images.count != labels.size()) {
    throw IoError("count mismatch in " + split + " split: " + std::to_string(images.count) + " images but " +
                  std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = limit == 0 ? images.count : std::min(limit, images.count);
  const std::size_t row = images.rows * images.cols;
  Batch b;
  b.x = Tensor({n, 1, images.rows, images.cols},
               std::vector<double>(images.pixels.begin(), images.pixels.begin() + static_cast<std::ptrdiff_t>(n * row)));
  b.y.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return b;
}

double gauss(Rng& rng) { return standard_normal(rng); }

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto d = read_all(path);
  check_header(d, path, 16, kImageMagic);
  IdxImages img{be32(d, 4), be32(d, 8), be32(d, 12), {}};
  const std::size_t need = img.count * img.rows * img.cols;
  if (d.size() - 16 < need) {
    throw IoError("truncated IDX file " + path.string() + ": expected " + std::to_string(need) +
                  " pixel bytes, found " + std::to_string(d.size() - 16));
  }
  img.pixels.resize(need);
  for (std::size_t i = 0; i < need; ++i) img.pixels[i] = static_cast<double>(d[16 + i]) / 255.0;
  return img;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path) {
  const auto d = read_all(path);
  check_header(d, path, 8, kLabelMagic);
  const std::size_t count = be32(d, 4);
  if (d.size() - 8 < count) {
    throw IoError("truncated IDX file " + path.string() + ": expected " + std::to_string(count) +
                  " labels, found " + std::to_string(d.size() - 8));
  }
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    labels[i] = d[8 + i];
    if (labels[i] > 9) throw IoError("label " + std::to_string(labels[i]) + " out of range in " + path.string());
  }
  return labels;
}

Dataset load_mnist(const std::filesystem::path& dir, std::size_t train_limit, std::size_t test_limit) {
  Dataset ds;
  ds.name = "mnist";
  ds.input_shape = {1, 28, 28};
  ds.classes = 10;
  const auto train_img = read_idx_images(find_file(dir, "train-images-idx3-ubyte"));
  const auto train_lbl = read_idx_labels(find_file(dir, "train-labels-idx1-ubyte"));
  const auto test_img = read_idx_images(find_file(dir, "t10k-images-idx3-ubyte"));
  const auto test_lbl = read_idx_labels(find_file(dir, "t10k-labels-idx1-ubyte"));
  for (const IdxImages* img : {&train_img, &test_img}) {
    if (img->rows != 28 || img->cols != 28) {
      throw IoError("MNIST images must be 28x28, got " + std::to_string(img->rows) + "x" + std::to_string(img->cols));
    }
  }
  ds.train = to_batch(train_img, train_lbl, train_limit, "train");
  ds.test = to_batch(test_img, test_lbl, test_limit, "test");
  return ds;
}

Dataset load_cifar10(const std::filesystem::path& dir, std::size_t train_limit, std::size_t test_limit) {
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  auto load = [&](const std::vector<std::string>& files, std::size_t limit) {
    std::vector<double> pixels;
    std::vector<int> labels;
    for (const std::string& name : files) {
      const auto d = read_all(dir / name);
      if (d.size() % kRecord != 0) {
        throw IoError("truncated CIFAR-10 batch " + (dir / name).string() + ": " + std::to_string(d.size()) +
                      " bytes is not a multiple of " + std::to_string(kRecord));
      }
      for (std::size_t at = 0; at < d.size(); at += kRecord) {
        if (limit != 0 && labels.size() == limit) break;
        if (d[at] > 9) throw IoError("label out of range in " + (dir / name).string());
        labels.push_back(d[at]);
        for (std::size_t i = 1; i < kRecord; ++i) pixels.push_back(static_cast<double>(d[at + i]) / 255.0);
      }
    }
    Batch b;
    b.x = Tensor({labels.size(), 3, 32, 32}, std::move(pixels));
    b.y = std::move(labels);
    return b;
  };
  Dataset ds;
  ds.name = "cifar10";
  ds.input_shape = {3, 32, 32};
  ds.classes = 10;
  ds.train = load({"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin", "data_batch_5.bin"},
                  train_limit);
  ds.test = load({"test_batch.bin"}, test_limit);
  return ds;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "blobs") return SyntheticKind::Blobs;
  if (name == "moons") return SyntheticKind::Moons;
  throw ConfigError("unknown synthetic dataset '" + name + "' (expected blobs or moons)");
}

Batch make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synthetic dataset needs at least 2 samples");
  if (!(noise >= 0.0)) throw ConfigError("synthetic noise must be >= 0");
  Rng rng(seed);
  Batch b;
  b.x = Tensor({n, 2});
  b.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    double px = 0.0, py = 0.0;
    if (kind == SyntheticKind::Blobs) {
      const double c = label == 0 ? 0.25 : 0.75;
      px = c + noise * gauss(rng);
      py = c + noise * gauss(rng);
    } else {
      const double t = std::numbers::pi * uniform01(rng);
      // Upper arc centered at (0.35, 0.4), lower arc shifted right and down.
      px = label == 0 ? 0.35 + 0.3 * std::cos(t) : 0.65 - 0.3 * std::cos(t);
      py = label == 0 ? 0.4 + 0.3 * std::sin(t) : 0.6 - 0.3 * std::sin(t);
      px += noise * gauss(rng);
      py += noise * gauss(rng);
    }
    b.x[2 * i] = std::clamp(px, 0.0, 1.0);
    b.x[2 * i + 1] = std::clamp(py, 0.0, 1.0);
    b.y[i] = label;
  }
  return b;
}

Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t n_train, std::size_t n_test, double noise,
                               std::uint64_t seed) {
  Dataset ds;
  ds.name = kind == SyntheticKind::Blobs ? "blobs" : "moons";
  ds.input_shape = {2};
  ds.classes = 2;
  ds.train = make_synthetic(kind, n_train, noise, derive_seed(seed, 0));
  ds.test = make_synthetic(kind, n_test, noise, derive_seed(seed, 1));
  return ds;
}

double min_cross_class_distance(const Batch& data) {
  const std::size_t n = data.size();
  const std::size_t d = data.x.row_size();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (data.y[i] == data.y[j]) continue;
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = data.x[i * d + k] - data.x[j * d + k];
        acc += diff * diff;
      }
      best = std::min(best, acc);
    }
  }
  return std::sqrt(best);
}

}  // namespace cactus::cli
