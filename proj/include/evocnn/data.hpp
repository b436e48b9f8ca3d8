#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "evocnn/tensor.hpp"

namespace evocnn {

struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Immutable after load; shared freely between workers.
struct Dataset {
  Tensor4 images;           // N x C x H x W, normalised reals
  std::vector<int> labels;  // in [0, classes)
  std::string split;        // train | validation | test
  int classes = 10;
};

// ---------------------------------------------------------------------------
// CIFAR10 binary format: records of 3073 bytes (1 label byte, then 3072 pixel
// bytes in R,G,B plane order, row-major 32x32). Real batch files hold 10000
// records; the reader accepts any whole number of records.
// ---------------------------------------------------------------------------

struct Cifar10Batch {
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> pixels;  // N * 3072, plane order

  std::size_t size() const { return labels.size(); }
};

Cifar10Batch parse_cifar10_records(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> serialize_cifar10_records(const Cifar10Batch& batch);

Cifar10Batch read_cifar10_batch(const std::filesystem::path& file);
void write_cifar10_batch(const std::filesystem::path& file, const Cifar10Batch& batch);

struct Cifar10Data {
  Dataset train;  // 5 batch files
  Dataset test;   // test_batch.bin
  std::array<double, 3> channel_mean{};   // computed from the training split
  std::array<double, 3> channel_stdev{};
};

// Loads data_batch_1..5.bin and test_batch.bin from a directory. Pixels are
// scaled to [0,1] and standardised per channel with training-split constants.
Cifar10Data load_cifar10(const std::filesystem::path& directory);

// ---------------------------------------------------------------------------
// Desk-scale reductions and synthetic data
// ---------------------------------------------------------------------------

// Class-balanced seeded subset. downsample_to = 0 keeps the resolution;
// otherwise it must be reachable from the source by repeated 2x2 halving.
Dataset desk_subset(const Dataset& d, int n_per_class, int downsample_to,
                    std::uint64_t seed);

// Two disjoint balanced subsets drawn in one seeded pass (train + validation).
std::pair<Dataset, Dataset> desk_split(const Dataset& d, int train_per_class,
                                       int val_per_class, int downsample_to,
                                       std::uint64_t seed);

Tensor4 avgpool_downsample(const Tensor4& t, int target_resolution);

struct SyntheticSpec {
  int classes = 10;
  int height = 16;
  int width = 16;
  int n_per_class = 100;
  double noise = 0.25;
};

// K-class images built from class-dependent oriented cosine gratings with a
// per-image amplitude jitter plus uniform noise. Balanced and fully seeded;
// at noise 0 the classes are linearly separable from raw pixels.
Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace evocnn
