#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evocnn/evaluator.hpp"
#include "evocnn/individual.hpp"
#include "evocnn/operators.hpp"
#include "evocnn/rng.hpp"

namespace evocnn {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Epoch schedule and fitness
// ---------------------------------------------------------------------------

struct EpochSchedule {
  enum class Mode { Flat, Linear };
  Mode mode = Mode::Flat;
  int flat_epochs = 60;
  int lo = 30;
  int hi = 70;
  int generations_total = 20;
};

// Training budget for a 1-based generation index. Linear interpolates
// lo -> hi over the run with round-half-up; a single-generation run uses hi.
int epochs_for_generation(int generation, const EpochSchedule& schedule);

// accuracy - penalty_per_hour * wall_seconds / 3600; never clamped, so slow
// evaluations can push fitness negative.
double regularised_fitness(double accuracy, double wall_seconds, double penalty_per_hour);

// ---------------------------------------------------------------------------
// Evaluation cache and checkpoint store
// ---------------------------------------------------------------------------

class EvalCache {
 public:
  const EvaluationRecord* find(const std::string& key, int epochs) const;
  void insert(const EvaluationRecord& record);
  std::vector<EvaluationRecord> records() const;
  std::size_t size() const { return records_.size(); }

 private:
  std::map<std::pair<std::string, int>, EvaluationRecord> records_;
};

class CheckpointStore {
 public:
  struct Entry {
    int epochs = 0;
    CheckpointBlob blob;  // null for evaluators without stored weights
  };

  const Entry* find(const std::string& key) const;
  // Keeps only the deepest training state per genome; epochs never decrease.
  void update(const std::string& key, int epochs, CheckpointBlob blob);
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Experiment configuration and per-generation results
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  int pop_size = 20;
  int generations = 20;
  std::uint64_t seed = 1;
  int workers = 1;
  double time_penalty_per_hour = 0.0;  // C; 0 recovers the accuracy-only baseline
  EpochSchedule schedule;
  OperatorConfig operators;
  ShapeSpec input{32, 32, 3};
  int classes = 10;
};

// Throws ConfigError before any work when a field is out of contract.
void validate_config(const ExperimentConfig& cfg);

struct GenerationStats {
  int generation = 0;
  double fitness_min = 0, fitness_mean = 0, fitness_max = 0;
  double accuracy_min = 0, accuracy_mean = 0, accuracy_max = 0;
  double mean_depth = 0;
  double wall_seconds = 0;  // evaluation work actually performed this generation
  std::vector<std::array<int, 2>> layer_histogram;  // per depth: {skip, pool}
};

struct EventRow {
  int generation = 0;
  std::string key;
  int epochs = 0;
  double accuracy = 0;
  double wall_seconds = 0;
  double fitness = 0;
  bool cache_hit = false;
  std::optional<int> resumed_from;
};

// Per-depth {skip, pool} counts over genomes longer than each depth index.
std::vector<std::array<int, 2>> layer_distribution(std::span<const Genome> population);

// ---------------------------------------------------------------------------
// Evaluation dispatch
// ---------------------------------------------------------------------------

struct EvaluatePopulationResult {
  std::vector<Individual> population;
  std::vector<EventRow> events;  // one row per slot, slot order
  double new_wall_seconds = 0;   // cache hits contribute nothing
};

// Evaluates one generation's genomes at the scheduled epoch budget. Repeated
// (key, epochs) pairs are served from the cache; genomes with a shallower
// checkpoint resume training for the difference. Up to cfg.workers tasks run
// concurrently; results are independent of scheduling order. Evaluator
// failures degrade to accuracy 0 and are reported in failures_log.
EvaluatePopulationResult evaluate_population(int generation,
                                             std::span<const Genome> genomes,
                                             Evaluator& evaluator, EvalCache& cache,
                                             CheckpointStore& store,
                                             const ExperimentConfig& cfg,
                                             std::vector<std::string>* failures_log = nullptr);

// Injects the previous best individual when its genome is missing from the
// evaluated new generation, replacing the minimum-fitness slot (ties take the
// earliest index). Returns the replaced index, if any.
std::optional<std::size_t> apply_elitism(const Individual& elite,
                                         std::vector<Individual>& population);

// ---------------------------------------------------------------------------
// Evolution driver
// ---------------------------------------------------------------------------

struct RunResult {
  Individual best_by_fitness;
  Individual best_by_accuracy;
  std::vector<GenerationStats> history;
  std::vector<EventRow> events;
  std::vector<std::string> failures;
};

// Snapshot of everything needed to continue a run after the given generation.
struct DriverState {
  int generation_completed = 0;
  std::uint64_t ga_rng_state = 0;
  std::vector<Individual> population;
  Individual best_by_fitness;
  Individual best_by_accuracy;
  std::vector<EvaluationRecord> cache_records;
  std::vector<std::pair<std::string, int>> checkpoint_epochs;
};

// One generation at a time: evaluate, apply elitism, collect statistics.
// Fully reproducible from (config, seed) when the evaluator is deterministic.
class EvolutionDriver {
 public:
  EvolutionDriver(ExperimentConfig cfg, Evaluator& evaluator);

  GenerationStats step();  // runs generation generation_completed() + 1
  bool done() const { return generation_completed_ >= cfg_.generations; }
  int generation_completed() const { return generation_completed_; }

  // Event rows produced by the last step().
  const std::vector<EventRow>& last_events() const { return last_events_; }
  const std::vector<Individual>& population() const { return population_; }
  const Individual& best_by_fitness() const { return best_by_fitness_; }
  const Individual& best_by_accuracy() const { return best_by_accuracy_; }
  const std::vector<std::string>& failures() const { return failures_; }
  CheckpointStore& checkpoint_store() { return store_; }

  DriverState snapshot() const;
  void restore(const DriverState& state,
               const std::vector<std::pair<std::string, CheckpointStore::Entry>>& checkpoints);

 private:
  ExperimentConfig cfg_;
  Evaluator& evaluator_;
  Rng ga_rng_;
  int generation_completed_ = 0;
  std::vector<Individual> population_;
  Individual best_by_fitness_;
  Individual best_by_accuracy_;
  bool have_best_ = false;
  EvalCache cache_;
  CheckpointStore store_;
  std::vector<EventRow> last_events_;
  std::vector<std::string> failures_;
};

// Runs the whole configured experiment in memory.
RunResult run_evolution(const ExperimentConfig& cfg, Evaluator& evaluator);

}  // namespace evocnn
