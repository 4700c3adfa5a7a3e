#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cactus/network.hpp"

namespace cactus::cli {

struct Dataset {
  std::string name;
  Batch train;
  Batch test;
  Shape input_shape;
  std::size_t classes = 0;
};

/// Raw IDX contents, pixel values scaled to [0, 1].
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;
};

/// Reads an IDX image file (magic 0x00000803); gzip-compressed files are
/// detected and inflated transparently.
IdxImages read_idx_images(const std::filesystem::path& path);
/// Reads an IDX label file (magic 0x00000801).
std::vector<int> read_idx_labels(const std::filesystem::path& path);

/// Loads {train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz] from `dir`. A limit
/// of 0 keeps the whole split; otherwise the first `limit` samples are used.
Dataset load_mnist(const std::filesystem::path& dir, std::size_t train_limit = 0, std::size_t test_limit = 0);

/// CIFAR-10 binary batches (data_batch_1..5.bin, test_batch.bin).
Dataset load_cifar10(const std::filesystem::path& dir, std::size_t train_limit = 0, std::size_t test_limit = 0);

enum class SyntheticKind { Blobs, Moons };
SyntheticKind parse_synthetic_kind(const std::string& name);

/// 2-D two-class samples in [0,1]^2. Blobs: Gaussians of std `noise` around
/// (0.25, 0.25) and (0.75, 0.75). Moons: two interleaved half circles with
/// Gaussian jitter. Labels alternate 0, 1, 0, ...
Batch make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed);
/// Train split from `seed`, test split from an independent stream.
Dataset make_synthetic_dataset(SyntheticKind kind, std::size_t n_train, std::size_t n_test, double noise,
                               std::uint64_t seed);

/// Smallest Euclidean distance between samples of different classes.
double min_cross_class_distance(const Batch& data);

}  // namespace cactus::cli
