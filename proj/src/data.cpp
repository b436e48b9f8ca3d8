#include "evocnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "evocnn/rng.hpp"

namespace evocnn {

namespace {

constexpr std::size_t kRecordBytes = 3073;
constexpr std::size_t kPixelBytes = 3072;
constexpr int kCifarClasses = 10;
constexpr int kCifarSide = 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in) throw DataFormatError("cannot open " + file.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataFormatError("short read from " + file.string());
  return bytes;
}

}  // namespace

Cifar10Batch parse_cifar10_records(const std::vector<std::uint8_t>& bytes) {
  if (bytes.empty() || bytes.size() % kRecordBytes != 0)
    throw DataFormatError("file size " + std::to_string(bytes.size()) +
                          " is not a whole number of 3073-byte records");
  const std::size_t n = bytes.size() / kRecordBytes;
  Cifar10Batch batch;
  batch.labels.reserve(n);
  batch.pixels.resize(n * kPixelBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t label = bytes[i * kRecordBytes];
    if (label >= kCifarClasses)
      throw DataFormatError("record " + std::to_string(i) + " has label byte " +
                            std::to_string(label));
    batch.labels.push_back(label);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(i * kRecordBytes + 1),
                kPixelBytes, batch.pixels.begin() + static_cast<std::ptrdiff_t>(i * kPixelBytes));
  }
  return batch;
}

std::vector<std::uint8_t> serialize_cifar10_records(const Cifar10Batch& batch) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(batch.size() * kRecordBytes);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bytes.push_back(batch.labels[i]);
    bytes.insert(bytes.end(),
                 batch.pixels.begin() + static_cast<std::ptrdiff_t>(i * kPixelBytes),
                 batch.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * kPixelBytes));
  }
  return bytes;
}

Cifar10Batch read_cifar10_batch(const std::filesystem::path& file) {
  return parse_cifar10_records(read_file(file));
}

void write_cifar10_batch(const std::filesystem::path& file, const Cifar10Batch& batch) {
  const std::vector<std::uint8_t> bytes = serialize_cifar10_records(batch);
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw DataFormatError("cannot open " + file.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataFormatError("short write to " + file.string());
}

namespace {

Dataset batches_to_dataset(const std::vector<Cifar10Batch>& batches, std::string split) {
  std::size_t total = 0;
  for (const Cifar10Batch& b : batches) total += b.size();
  Dataset d;
  d.split = std::move(split);
  d.classes = kCifarClasses;
  d.images = Tensor4(static_cast<int>(total), 3, kCifarSide, kCifarSide);
  d.labels.reserve(total);
  std::size_t offset = 0;
  for (const Cifar10Batch& b : batches) {
    for (std::size_t i = 0; i < b.size(); ++i) d.labels.push_back(b.labels[i]);
    for (std::size_t k = 0; k < b.pixels.size(); ++k)
      d.images.v[offset + k] = static_cast<double>(b.pixels[k]) / 255.0;
    offset += b.pixels.size();
  }
  return d;
}

void standardise(Dataset& d, const std::array<double, 3>& mean,
                 const std::array<double, 3>& stdev) {
  const std::size_t plane = static_cast<std::size_t>(d.images.h) * d.images.w;
  for (int i = 0; i < d.images.n; ++i)
    for (int c = 0; c < 3; ++c) {
      double* p = &d.images.at(i, c, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) p[k] = (p[k] - mean[c]) / stdev[c];
    }
}

}  // namespace

Cifar10Data load_cifar10(const std::filesystem::path& directory) {
  std::vector<Cifar10Batch> train_batches;
  for (int i = 1; i <= 5; ++i)
    train_batches.push_back(
        read_cifar10_batch(directory / ("data_batch_" + std::to_string(i) + ".bin")));
  const std::vector<Cifar10Batch> test_batches{
      read_cifar10_batch(directory / "test_batch.bin")};

  Cifar10Data data;
  data.train = batches_to_dataset(train_batches, "train");
  data.test = batches_to_dataset(test_batches, "test");

  const std::size_t plane = static_cast<std::size_t>(kCifarSide) * kCifarSide;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < data.train.images.n; ++i) {
      const double* p = &data.train.images.at(i, c, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += p[k] * p[k];
      }
    }
    const double count = static_cast<double>(data.train.images.n) * plane;
    data.channel_mean[c] = sum / count;
    data.channel_stdev[c] = std::sqrt(sq / count - data.channel_mean[c] * data.channel_mean[c]);
  }
  standardise(data.train, data.channel_mean, data.channel_stdev);
  standardise(data.test, data.channel_mean, data.channel_stdev);
  return data;
}

// ---------------------------------------------------------------------------
// Desk-scale reductions
// ---------------------------------------------------------------------------

Tensor4 avgpool_downsample(const Tensor4& t, int target_resolution) {
  Tensor4 cur = t;
  while (cur.h > target_resolution || cur.w > target_resolution) {
    if (cur.h % 2 != 0 || cur.w % 2 != 0 || cur.h / 2 < target_resolution)
      throw std::invalid_argument("resolution " + std::to_string(target_resolution) +
                                  " is not reachable by 2x2 halving");
    Tensor4 next(cur.n, cur.c, cur.h / 2, cur.w / 2);
    for (int i = 0; i < cur.n; ++i)
      for (int c = 0; c < cur.c; ++c)
        for (int y = 0; y < next.h; ++y)
          for (int x = 0; x < next.w; ++x)
            next.at(i, c, y, x) = 0.25 * (cur.at(i, c, 2 * y, 2 * x) +
                                          cur.at(i, c, 2 * y, 2 * x + 1) +
                                          cur.at(i, c, 2 * y + 1, 2 * x) +
                                          cur.at(i, c, 2 * y + 1, 2 * x + 1));
    cur = std::move(next);
  }
  return cur;
}

namespace {

// Per-class index pools shuffled with a seeded stream, so successive take()
// calls hand out disjoint balanced picks.
class BalancedPicker {
 public:
  BalancedPicker(const Dataset& d, std::uint64_t seed) : classes_(d.classes) {
    pools_.resize(classes_);
    for (std::size_t i = 0; i < d.labels.size(); ++i)
      pools_[d.labels[i]].push_back(static_cast<std::uint32_t>(i));
    Rng rng(derive_seed(seed, stream::kDataSubset));
    for (auto& pool : pools_)
      for (std::size_t i = pool.size(); i > 1; --i)
        std::swap(pool[i - 1], pool[rng.below(i)]);
  }

  // n per class, interleaved round-robin across classes
  std::vector<std::uint32_t> take(int n_per_class) {
    for (int c = 0; c < classes_; ++c)
      if (cursor_ + n_per_class > pools_[c].size())
        throw std::invalid_argument("not enough samples of class " + std::to_string(c));
    std::vector<std::uint32_t> out;
    out.reserve(static_cast<std::size_t>(n_per_class) * classes_);
    for (int k = 0; k < n_per_class; ++k)
      for (int c = 0; c < classes_; ++c) out.push_back(pools_[c][cursor_ + k]);
    cursor_ += n_per_class;
    return out;
  }

 private:
  int classes_;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::uint32_t>> pools_;
};

Dataset gather(const Dataset& d, const std::vector<std::uint32_t>& idx,
               int downsample_to, std::string split) {
  Dataset out;
  out.split = std::move(split);
  out.classes = d.classes;
  out.images = Tensor4(static_cast<int>(idx.size()), d.images.c, d.images.h, d.images.w);
  out.labels.reserve(idx.size());
  const std::size_t sample =
      static_cast<std::size_t>(d.images.c) * d.images.h * d.images.w;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(d.images.v.data() + sample * idx[i], sample,
                out.images.v.data() + sample * i);
    out.labels.push_back(d.labels[idx[i]]);
  }
  if (downsample_to > 0 && downsample_to != d.images.h)
    out.images = avgpool_downsample(out.images, downsample_to);
  return out;
}

}  // namespace

Dataset desk_subset(const Dataset& d, int n_per_class, int downsample_to,
                    std::uint64_t seed) {
  BalancedPicker picker(d, seed);
  return gather(d, picker.take(n_per_class), downsample_to, d.split);
}

std::pair<Dataset, Dataset> desk_split(const Dataset& d, int train_per_class,
                                       int val_per_class, int downsample_to,
                                       std::uint64_t seed) {
  BalancedPicker picker(d, seed);
  Dataset train = gather(d, picker.take(train_per_class), downsample_to, "train");
  Dataset val = gather(d, picker.take(val_per_class), downsample_to, "validation");
  return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  const int n = spec.n_per_class * spec.classes;
  Dataset d;
  d.split = "train";
  d.classes = spec.classes;
  d.images = Tensor4(n, 3, spec.height, spec.width);
  d.labels.resize(n);
  Rng rng(derive_seed(seed, stream::kSynthetic));
  const double scale = static_cast<double>(std::max(spec.height, spec.width));
  for (int i = 0; i < n; ++i) {
    const int k = i % spec.classes;  // exactly balanced
    d.labels[i] = k;
    const double theta = std::numbers::pi * k / spec.classes;
    const double freq = 1.0 + k % 3;
    const double amplitude = 0.75 + 0.5 * rng.real();
    const double cos_t = std::cos(theta), sin_t = std::sin(theta);
    for (int c = 0; c < 3; ++c) {
      const double phase = c * std::numbers::pi / 3.0;
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
          const double u = 2.0 * std::numbers::pi * freq * (x * cos_t + y * sin_t) / scale;
          double v = amplitude * std::cos(u + phase);
          if (spec.noise > 0.0) v += spec.noise * (2.0 * rng.real() - 1.0);
          d.images.at(i, c, y, x) = v;
        }
    }
  }
  return d;
}

}  // namespace evocnn
