#pragma once

#include <cstdint>
#include <string_view>

namespace evocnn {

// splitmix64 stream. Single 64-bit word of state, so snapshots and
// serialisation are one integer, and results are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // unbiased uniform in [0, n), n >= 1
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  // uniform on the closed interval [lo, hi]
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  bool bernoulli(double p) { return real() < p; }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// Stable derivation of independent streams from (seed, tag, a, b).
// Streams are a function of their inputs only, never of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix64(seed ^ 0x9e3779b97f4a7c15ull);
  h = mix64(h ^ tag);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  return h;
}

namespace stream {
// Tags for derive_seed. Fixed values are part of the reproducibility contract.
inline constexpr std::uint64_t kInitGenome = 1;
inline constexpr std::uint64_t kGaLoop = 2;
inline constexpr std::uint64_t kModelParams = 3;
inline constexpr std::uint64_t kShuffleCursor = 4;
inline constexpr std::uint64_t kDataSubset = 5;
inline constexpr std::uint64_t kSynthetic = 6;
}  // namespace stream

}  // namespace evocnn
