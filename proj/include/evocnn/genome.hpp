#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evocnn/rng.hpp"

namespace evocnn {

struct ShapeSpec {
  int height = 0;
  int width = 0;
  int channels = 0;
  bool operator==(const ShapeSpec&) const = default;
};

enum class PoolKind { Max, Average };

// Residual block of two 3x3 convolutions; the shortcut uses a 1x1 projection
// when input channels differ from filters_2.
struct SkipGene {
  int filters_1 = 0;
  int filters_2 = 0;
  bool operator==(const SkipGene&) const = default;
};

struct PoolGene {
  PoolKind kind = PoolKind::Max;
  bool operator==(const PoolGene&) const = default;
};

using LayerGene = std::variant<SkipGene, PoolGene>;

inline bool is_skip(const LayerGene& g) { return std::holds_alternative<SkipGene>(g); }
inline bool is_pool(const LayerGene& g) { return std::holds_alternative<PoolGene>(g); }

// The evolved feature-extraction stack. The classifier (flatten -> linear ->
// softmax) is implicit and never part of the genome.
struct Genome {
  std::vector<LayerGene> layers;

  std::size_t size() const { return layers.size(); }
  bool empty() const { return layers.empty(); }
  bool operator==(const Genome&) const = default;
};

struct InvalidGenome : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeyParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Sampling parameters for initialisation and mutation. The defaults are the
// full-scale settings; desk-scale configs shrink filters and depth.
struct GenomeConfig {
  std::vector<int> filter_choices{64, 128, 256};
  int depth_min = 10;
  int depth_max = 120;
  double p_skip = 0.5;
};

// Random stack: draw max depth from [depth_min, depth_max], then append skip
// or pool genes with equal probability. Generation stops when a drawn pool
// would shrink a dimension below one pixel, or when max depth is reached.
Genome random_genome(Rng& rng, ShapeSpec input, const GenomeConfig& cfg);

// Feature-map shape before the classifier. Throws InvalidGenome if a pool
// would take a spatial dimension below one pixel.
ShapeSpec output_shape(const Genome& g, ShapeSpec input);

bool genome_valid(const Genome& g, ShapeSpec input) noexcept;

int pool_count(const Genome& g);
int skip_count(const Genome& g);

// Canonical ASCII identity used for caching. Grammar:
//   genome = token ("|" token)* ; token = "S" int "." int | "PM" | "PA"
// The empty genome is "E".
std::string canonical_key(const Genome& g);

// Inverse of canonical_key. Throws KeyParseError on malformed input.
Genome parse_key(std::string_view key);

struct CostEstimate {
  std::uint64_t mac_count = 0;    // multiply-accumulates per image
  std::uint64_t param_count = 0;  // weights + biases
};

// Per-image cost of the network a genome describes, classifier included.
// Convolutions count H*W*9*C_in*C_out MACs, the 1x1 shortcut projection
// (present when input channels != filters_2) counts H*W*C_in*C_out and
// carries no bias.
CostEstimate cost_estimate(const Genome& g, ShapeSpec input, int classes);

}  // namespace evocnn
