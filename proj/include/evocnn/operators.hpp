#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "evocnn/genome.hpp"
#include "evocnn/individual.hpp"
#include "evocnn/rng.hpp"

namespace evocnn {

struct PopulationTooSmall : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MutationWeights {
  double insert_skip = 0.7;
  double insert_pool = 0.1;
  double remove = 0.1;
  double alter = 0.1;

  double sum() const { return insert_skip + insert_pool + remove + alter; }
};

struct OperatorConfig {
  double p_crossover = 0.9;
  double p_mutation = 0.2;
  MutationWeights mutation_weights;
  int max_retries = 25;
  GenomeConfig genome;  // filter choices shared with initialisation
};

// One-point splice at independent cut positions: children are
// a[0..cut_a) ++ b[cut_b..) and b[0..cut_b) ++ a[cut_a..).
std::pair<Genome, Genome> splice(const Genome& a, const Genome& b,
                                 std::size_t cut_a, std::size_t cut_b);

// Draws uniform cuts, splices, and restarts from fresh cuts whenever either
// child would pool below one pixel. After max_retries the parents are
// returned unchanged.
std::pair<Genome, Genome> crossover(Rng& rng, const Genome& a, const Genome& b,
                                    ShapeSpec input, const OperatorConfig& cfg);

enum class MutationOp { InsertSkip, InsertPool, Remove, Alter, None };

struct MutationResult {
  Genome genome;
  MutationOp applied = MutationOp::None;
  int attempts = 0;
};

// One sub-operation drawn by mutation_weights. Invalid outcomes (a pool that
// would halve below one pixel) and remove/alter on an empty genome restart
// the whole draw; after max_retries the input genome is returned unchanged.
MutationResult mutate_ex(Rng& rng, const Genome& g, ShapeSpec input,
                         const OperatorConfig& cfg);

Genome mutate(Rng& rng, const Genome& g, ShapeSpec input, const OperatorConfig& cfg);

// Fitter of two distinct uniform draws; exact fitness ties break uniformly.
// Throws PopulationTooSmall for populations of fewer than two.
const Individual& tournament_select(Rng& rng, std::span<const Individual> population);

// Fills a new generation of genomes: tournament parent, crossover with
// probability p_crossover (both children join the pool), then independent
// mutation of each child with probability p_mutation. Elitism is applied by
// the engine after the new generation has been evaluated.
std::vector<Genome> next_generation(Rng& rng, std::span<const Individual> population,
                                    ShapeSpec input, const OperatorConfig& cfg,
                                    int pop_size);

}  // namespace evocnn
