#include "evocnn/genome.hpp"

#include <charconv>

namespace evocnn {

namespace {

int pooled_dim(int d) { return d / 2; }  // exact halving, floor for odd dims

bool pool_fits(int h, int w) { return pooled_dim(h) >= 1 && pooled_dim(w) >= 1; }

}  // namespace

Genome random_genome(Rng& rng, ShapeSpec input, const GenomeConfig& cfg) {
  const int max_depth = rng.uniform_int(cfg.depth_min, cfg.depth_max);
  Genome g;
  int h = input.height;
  int w = input.width;
  while (static_cast<int>(g.size()) < max_depth) {
    if (rng.bernoulli(cfg.p_skip)) {
      const int f1 = cfg.filter_choices[rng.below(cfg.filter_choices.size())];
      const int f2 = cfg.filter_choices[rng.below(cfg.filter_choices.size())];
      g.layers.emplace_back(SkipGene{f1, f2});
    } else {
      if (!pool_fits(h, w)) break;  // a blocked pool draw ends generation
      const PoolKind kind = rng.below(2) == 0 ? PoolKind::Max : PoolKind::Average;
      g.layers.emplace_back(PoolGene{kind});
      h = pooled_dim(h);
      w = pooled_dim(w);
    }
  }
  return g;
}

ShapeSpec output_shape(const Genome& g, ShapeSpec input) {
  ShapeSpec s = input;
  for (const LayerGene& gene : g.layers) {
    if (const auto* skip = std::get_if<SkipGene>(&gene)) {
      s.channels = skip->filters_2;  // 3x3 convs are same-padded
    } else {
      s.height = pooled_dim(s.height);
      s.width = pooled_dim(s.width);
      if (s.height < 1 || s.width < 1)
        throw InvalidGenome("pool layer reduces resolution below one pixel");
    }
  }
  return s;
}

bool genome_valid(const Genome& g, ShapeSpec input) noexcept {
  int h = input.height;
  int w = input.width;
  for (const LayerGene& gene : g.layers) {
    if (is_pool(gene)) {
      h = pooled_dim(h);
      w = pooled_dim(w);
      if (h < 1 || w < 1) return false;
    }
  }
  return true;
}

int pool_count(const Genome& g) {
  int n = 0;
  for (const LayerGene& gene : g.layers) n += is_pool(gene) ? 1 : 0;
  return n;
}

int skip_count(const Genome& g) {
  int n = 0;
  for (const LayerGene& gene : g.layers) n += is_skip(gene) ? 1 : 0;
  return n;
}

std::string canonical_key(const Genome& g) {
  if (g.empty()) return "E";
  std::string key;
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    if (i) key += '|';
    if (const auto* skip = std::get_if<SkipGene>(&g.layers[i])) {
      key += 'S';
      key += std::to_string(skip->filters_1);
      key += '.';
      key += std::to_string(skip->filters_2);
    } else {
      key += std::get<PoolGene>(g.layers[i]).kind == PoolKind::Max ? "PM" : "PA";
    }
  }
  return key;
}

namespace {

int parse_positive_int(std::string_view s) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || value <= 0)
    throw KeyParseError("bad integer in genome key: '" + std::string(s) + "'");
  return value;
}

LayerGene parse_token(std::string_view tok) {
  if (tok == "PM") return PoolGene{PoolKind::Max};
  if (tok == "PA") return PoolGene{PoolKind::Average};
  if (tok.size() >= 4 && tok.front() == 'S') {
    const auto dot = tok.find('.');
    if (dot != std::string_view::npos && dot > 1 && dot + 1 < tok.size()) {
      return SkipGene{parse_positive_int(tok.substr(1, dot - 1)),
                      parse_positive_int(tok.substr(dot + 1))};
    }
  }
  throw KeyParseError("bad genome key token: '" + std::string(tok) + "'");
}

}  // namespace

Genome parse_key(std::string_view key) {
  if (key.empty()) throw KeyParseError("empty genome key");
  if (key == "E") return Genome{};
  Genome g;
  std::size_t start = 0;
  while (true) {
    const std::size_t bar = key.find('|', start);
    const std::string_view tok =
        key.substr(start, bar == std::string_view::npos ? bar : bar - start);
    if (tok.empty()) throw KeyParseError("empty token in genome key");
    g.layers.push_back(parse_token(tok));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  return g;
}

CostEstimate cost_estimate(const Genome& g, ShapeSpec input, int classes) {
  ShapeSpec s = input;
  CostEstimate cost;
  for (const LayerGene& gene : g.layers) {
    if (const auto* skip = std::get_if<SkipGene>(&gene)) {
      const std::uint64_t hw = static_cast<std::uint64_t>(s.height) * s.width;
      const std::uint64_t c_in = s.channels;
      const std::uint64_t f1 = skip->filters_1;
      const std::uint64_t f2 = skip->filters_2;
      cost.mac_count += hw * 9 * c_in * f1;
      cost.mac_count += hw * 9 * f1 * f2;
      cost.param_count += 9 * c_in * f1 + f1;
      cost.param_count += 9 * f1 * f2 + f2;
      if (c_in != f2) {  // 1x1 projection, no bias
        cost.mac_count += hw * c_in * f2;
        cost.param_count += c_in * f2;
      }
      s.channels = skip->filters_2;
    } else {
      s.height = pooled_dim(s.height);
      s.width = pooled_dim(s.width);
      if (s.height < 1 || s.width < 1)
        throw InvalidGenome("pool layer reduces resolution below one pixel");
    }
  }
  const std::uint64_t features =
      static_cast<std::uint64_t>(s.height) * s.width * s.channels;
  cost.mac_count += features * classes;
  cost.param_count += features * classes + classes;
  return cost;
}

}  // namespace evocnn
