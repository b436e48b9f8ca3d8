#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "evocnn/operators.hpp"
#include "helpers.hpp"

using namespace evocnn;
using namespace test_helpers;

namespace {

Individual individual(Genome g, double fitness) {
  Individual ind;
  ind.key = canonical_key(g);
  ind.genome = std::move(g);
  ind.fitness = fitness;
  return ind;
}

std::multiset<std::string> gene_multiset(const Genome& g) {
  std::multiset<std::string> out;
  for (const LayerGene& gene : g.layers) {
    Genome one;
    one.layers.push_back(gene);
    out.insert(canonical_key(one));
  }
  return out;
}

Genome five_pools() {
  Genome g;
  for (int i = 0; i < 5; ++i) g.layers.push_back(PoolGene{PoolKind::Max});
  return g;
}

}  // namespace

TEST_CASE("splice recombines the stacks cross-wise") {
  const Genome a = genome_of({S(64, 64), S(128, 128), PM()});
  const Genome b = genome_of({S(256, 256), PA()});

  const auto [c1, c2] = splice(a, b, 1, 1);
  CHECK(c1 == genome_of({S(64, 64), PA()}));
  CHECK(c2 == genome_of({S(256, 256), S(128, 128), PM()}));

  const auto [d1, d2] = splice(a, b, 0, 0);
  CHECK(d1 == b);
  CHECK(d2 == a);
}

TEST_CASE("five-pool parents only recombine at equal cuts") {
  const ShapeSpec input{32, 32, 3};
  const Genome a = five_pools(), b = five_pools();
  for (std::size_t ca = 0; ca <= 5; ++ca)
    for (std::size_t cb = 0; cb <= 5; ++cb) {
      const auto [c1, c2] = splice(a, b, ca, cb);
      const bool valid = genome_valid(c1, input) && genome_valid(c2, input);
      CHECK(valid == (ca == cb));
    }

  // the retry loop lands on a valid pair or falls back to the parents
  OperatorConfig cfg;
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [c1, c2] = crossover(rng, a, b, input, cfg);
    CHECK(genome_valid(c1, input));
    CHECK(genome_valid(c2, input));
  }
}

TEST_CASE("crossover conserves the gene multiset and closes over validity") {
  const ShapeSpec input{32, 32, 3};
  OperatorConfig cfg;
  Rng rng(21);
  for (int trial = 0; trial < 2000; ++trial) {
    const Genome a = random_genome(rng, input, cfg.genome);
    const Genome b = random_genome(rng, input, cfg.genome);
    const auto [c1, c2] = crossover(rng, a, b, input, cfg);
    REQUIRE(genome_valid(c1, input));
    REQUIRE(genome_valid(c2, input));
    auto parents = gene_multiset(a);
    for (const std::string& k : gene_multiset(b)) parents.insert(k);
    auto children = gene_multiset(c1);
    for (const std::string& k : gene_multiset(c2)) children.insert(k);
    REQUIRE(parents == children);
  }
}

TEST_CASE("alter flips a pool gene's kind") {
  OperatorConfig cfg;
  cfg.mutation_weights = {0, 0, 0, 1};
  Rng rng(3);
  const MutationResult r =
      mutate_ex(rng, genome_of({PM()}), ShapeSpec{32, 32, 3}, cfg);
  CHECK(r.applied == MutationOp::Alter);
  CHECK(r.genome == genome_of({PA()}));
}

TEST_CASE("mutation falls back to the input when no valid placement exists") {
  OperatorConfig cfg;
  cfg.mutation_weights = {0, 1, 0, 0};  // insert_pool only
  const Genome g = five_pools();
  Rng rng(4);
  const MutationResult r = mutate_ex(rng, g, ShapeSpec{32, 32, 3}, cfg);
  CHECK(r.genome == g);
  CHECK(r.applied == MutationOp::None);
  CHECK(r.attempts == cfg.max_retries);
}

TEST_CASE("remove and alter on an empty genome fall through to a restart") {
  OperatorConfig cfg;
  cfg.mutation_weights = {0, 0, 0.5, 0.5};
  Rng rng(6);
  const MutationResult r = mutate_ex(rng, Genome{}, ShapeSpec{32, 32, 3}, cfg);
  CHECK(r.genome == Genome{});
  CHECK(r.applied == MutationOp::None);
}

TEST_CASE("mutation sub-operation frequencies match the configured weights") {
  OperatorConfig cfg;
  const Genome g = genome_of({S(64, 64), S(128, 128), PM()});
  const ShapeSpec input{32, 32, 3};
  Rng rng(8);
  std::map<MutationOp, int> counts;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) ++counts[mutate_ex(rng, g, input, cfg).applied];
  CHECK(counts[MutationOp::None] == 0);
  const auto frequency = [&](MutationOp op) {
    return static_cast<double>(counts[op]) / trials;
  };
  CHECK(std::abs(frequency(MutationOp::InsertSkip) - 0.7) <= 0.01);
  CHECK(std::abs(frequency(MutationOp::InsertPool) - 0.1) <= 0.01);
  CHECK(std::abs(frequency(MutationOp::Remove) - 0.1) <= 0.01);
  CHECK(std::abs(frequency(MutationOp::Alter) - 0.1) <= 0.01);
}

TEST_CASE("mutation changes length by at most one and preserves validity") {
  OperatorConfig cfg;
  const ShapeSpec input{32, 32, 3};
  Rng rng(9);
  for (int trial = 0; trial < 5000; ++trial) {
    const Genome g = random_genome(rng, input, cfg.genome);
    const Genome m = mutate(rng, g, input, cfg);
    REQUIRE(genome_valid(m, input));
    const auto delta =
        static_cast<long>(m.size()) - static_cast<long>(g.size());
    REQUIRE(delta >= -1);
    REQUIRE(delta <= 1);
  }
}

TEST_CASE("tournament selection picks the fitter of two distinct draws") {
  Rng rng(10);
  const std::vector<Individual> two{individual(genome_of({PM()}), 0.9),
                                    individual(genome_of({PA()}), 0.5)};
  for (int t = 0; t < 50; ++t) CHECK(tournament_select(rng, two).fitness == 0.9);

  const std::vector<Individual> negative{individual(genome_of({PM()}), -0.2),
                                         individual(genome_of({PA()}), -0.5)};
  CHECK(tournament_select(rng, negative).fitness == -0.2);

  const std::vector<Individual> one{individual(genome_of({PM()}), 0.9)};
  CHECK_THROWS_AS(tournament_select(rng, one), PopulationTooSmall);
}

TEST_CASE("the best of three wins two of three equally likely pairs") {
  const std::vector<Individual> three{individual(genome_of({PM()}), 0.1),
                                      individual(genome_of({PA()}), 0.5),
                                      individual(genome_of({S(64, 64)}), 0.9)};
  Rng rng(12);
  int best = 0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t)
    best += tournament_select(rng, three).fitness == 0.9 ? 1 : 0;
  CHECK(std::abs(static_cast<double>(best) / trials - 2.0 / 3.0) <= 0.01);
}

TEST_CASE("exact fitness ties break both ways") {
  const std::vector<Individual> tied{individual(genome_of({PM()}), 0.5),
                                     individual(genome_of({PA()}), 0.5)};
  Rng rng(13);
  int first = 0;
  for (int t = 0; t < 2000; ++t)
    first += &tournament_select(rng, tied) == &tied[0] ? 1 : 0;
  CHECK(first > 500);
  CHECK(first < 1500);
}

TEST_CASE("next generation fills exactly pop_size slots") {
  const ShapeSpec input{32, 32, 3};
  OperatorConfig cfg;
  Rng seed_rng(14);
  std::vector<Individual> parents;
  for (int i = 0; i < 6; ++i) {
    Individual ind = individual(random_genome(seed_rng, input, cfg.genome), 0.1 * i);
    parents.push_back(std::move(ind));
  }
  Rng rng(15);
  for (const int pop_size : {1, 2, 7, 20}) {
    const std::vector<Genome> next = next_generation(rng, parents, input, cfg, pop_size);
    CHECK(static_cast<int>(next.size()) == pop_size);
    for (const Genome& g : next) CHECK(genome_valid(g, input));
  }
}

TEST_CASE("pure selection only passes parents through") {
  const ShapeSpec input{32, 32, 3};
  OperatorConfig cfg;
  cfg.p_crossover = 0;
  cfg.p_mutation = 0;
  Rng seed_rng(16);
  std::vector<Individual> parents;
  std::set<std::string> parent_keys;
  for (int i = 0; i < 5; ++i) {
    Individual ind = individual(random_genome(seed_rng, input, cfg.genome), 0.1 * i);
    parent_keys.insert(ind.key);
    parents.push_back(std::move(ind));
  }
  Rng rng(17);
  for (const Genome& g : next_generation(rng, parents, input, cfg, 20))
    CHECK(parent_keys.count(canonical_key(g)) == 1);
}
