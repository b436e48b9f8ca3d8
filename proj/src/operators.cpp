#include "evocnn/operators.hpp"

#include <algorithm>
#include <cassert>

namespace evocnn {

std::pair<Genome, Genome> splice(const Genome& a, const Genome& b,
                                 std::size_t cut_a, std::size_t cut_b) {
  assert(cut_a <= a.size() && cut_b <= b.size());
  Genome child1, child2;
  child1.layers.reserve(cut_a + b.size() - cut_b);
  child2.layers.reserve(cut_b + a.size() - cut_a);
  child1.layers.assign(a.layers.begin(), a.layers.begin() + cut_a);
  child1.layers.insert(child1.layers.end(), b.layers.begin() + cut_b, b.layers.end());
  child2.layers.assign(b.layers.begin(), b.layers.begin() + cut_b);
  child2.layers.insert(child2.layers.end(), a.layers.begin() + cut_a, a.layers.end());
  return {std::move(child1), std::move(child2)};
}

std::pair<Genome, Genome> crossover(Rng& rng, const Genome& a, const Genome& b,
                                    ShapeSpec input, const OperatorConfig& cfg) {
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const auto cut_a = rng.below(a.size() + 1);
    const auto cut_b = rng.below(b.size() + 1);
    auto children = splice(a, b, cut_a, cut_b);
    if (genome_valid(children.first, input) && genome_valid(children.second, input))
      return children;
  }
  return {a, b};
}

namespace {

MutationOp draw_op(Rng& rng, const MutationWeights& w) {
  const double r = rng.real() * w.sum();
  if (r < w.insert_skip) return MutationOp::InsertSkip;
  if (r < w.insert_skip + w.insert_pool) return MutationOp::InsertPool;
  if (r < w.insert_skip + w.insert_pool + w.remove) return MutationOp::Remove;
  return MutationOp::Alter;
}

}  // namespace

MutationResult mutate_ex(Rng& rng, const Genome& g, ShapeSpec input,
                         const OperatorConfig& cfg) {
  const auto& filters = cfg.genome.filter_choices;
  for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
    const MutationOp op = draw_op(rng, cfg.mutation_weights);
    Genome out = g;
    switch (op) {
      case MutationOp::InsertSkip: {
        const auto pos = rng.below(out.size() + 1);
        const int f1 = filters[rng.below(filters.size())];
        const int f2 = filters[rng.below(filters.size())];
        out.layers.insert(out.layers.begin() + pos, SkipGene{f1, f2});
        return {std::move(out), op, attempt};
      }
      case MutationOp::InsertPool: {
        const auto pos = rng.below(out.size() + 1);
        const PoolKind kind = rng.below(2) == 0 ? PoolKind::Max : PoolKind::Average;
        out.layers.insert(out.layers.begin() + pos, PoolGene{kind});
        if (genome_valid(out, input)) return {std::move(out), op, attempt};
        break;  // restart the whole draw
      }
      case MutationOp::Remove: {
        if (out.empty()) break;
        const auto idx = rng.below(out.size());
        out.layers.erase(out.layers.begin() + idx);
        return {std::move(out), op, attempt};
      }
      case MutationOp::Alter: {
        if (out.empty()) break;
        const auto idx = rng.below(out.size());
        if (auto* skip = std::get_if<SkipGene>(&out.layers[idx])) {
          skip->filters_1 = filters[rng.below(filters.size())];
          skip->filters_2 = filters[rng.below(filters.size())];
        } else {
          auto& pool = std::get<PoolGene>(out.layers[idx]);
          pool.kind = pool.kind == PoolKind::Max ? PoolKind::Average : PoolKind::Max;
        }
        return {std::move(out), op, attempt};
      }
      case MutationOp::None:
        break;
    }
  }
  return {g, MutationOp::None, cfg.max_retries};
}

Genome mutate(Rng& rng, const Genome& g, ShapeSpec input, const OperatorConfig& cfg) {
  return mutate_ex(rng, g, input, cfg).genome;
}

const Individual& tournament_select(Rng& rng, std::span<const Individual> population) {
  if (population.size() < 2)
    throw PopulationTooSmall("tournament selection needs at least two individuals");
  const auto i = rng.below(population.size());
  auto j = rng.below(population.size() - 1);
  if (j >= i) ++j;
  const Individual& a = population[i];
  const Individual& b = population[j];
  if (a.fitness != b.fitness) return a.fitness > b.fitness ? a : b;
  return rng.bernoulli(0.5) ? a : b;
}

std::vector<Genome> next_generation(Rng& rng, std::span<const Individual> population,
                                    ShapeSpec input, const OperatorConfig& cfg,
                                    int pop_size) {
  std::vector<Genome> out;
  out.reserve(pop_size);
  while (static_cast<int>(out.size()) < pop_size) {
    const Individual& first = tournament_select(rng, population);
    std::vector<Genome> batch;
    if (rng.bernoulli(cfg.p_crossover)) {
      const Individual& second = tournament_select(rng, population);
      auto children = crossover(rng, first.genome, second.genome, input, cfg);
      batch.push_back(std::move(children.first));
      batch.push_back(std::move(children.second));
    } else {
      batch.push_back(first.genome);
    }
    for (Genome& child : batch) {
      if (rng.bernoulli(cfg.p_mutation)) child = mutate(rng, child, input, cfg);
    }
    const std::size_t room = pop_size - out.size();
    if (batch.size() <= room) {
      for (Genome& child : batch) out.push_back(std::move(child));
    } else {
      out.push_back(std::move(batch[rng.below(batch.size())]));
    }
  }
  return out;
}

}  // namespace evocnn
