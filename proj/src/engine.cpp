#include "evocnn/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>
#include <unordered_map>

namespace evocnn {

int epochs_for_generation(int generation, const EpochSchedule& schedule) {
  if (generation < 1 || generation > schedule.generations_total)
    throw std::out_of_range("generation " + std::to_string(generation) +
                            " outside [1, " + std::to_string(schedule.generations_total) + "]");
  if (schedule.mode == EpochSchedule::Mode::Flat) return schedule.flat_epochs;
  if (schedule.generations_total == 1) return schedule.hi;
  const double t = static_cast<double>(generation - 1) / (schedule.generations_total - 1);
  return static_cast<int>(std::floor(schedule.lo + (schedule.hi - schedule.lo) * t + 0.5));
}

double regularised_fitness(double accuracy, double wall_seconds, double penalty_per_hour) {
  return accuracy - penalty_per_hour * wall_seconds / 3600.0;
}

// ---------------------------------------------------------------------------
// Cache and checkpoint store
// ---------------------------------------------------------------------------

const EvaluationRecord* EvalCache::find(const std::string& key, int epochs) const {
  const auto it = records_.find({key, epochs});
  return it == records_.end() ? nullptr : &it->second;
}

void EvalCache::insert(const EvaluationRecord& record) {
  records_.insert_or_assign({record.canonical_key, record.epochs}, record);
}

std::vector<EvaluationRecord> EvalCache::records() const {
  std::vector<EvaluationRecord> out;
  out.reserve(records_.size());
  for (const auto& [key, record] : records_) out.push_back(record);
  return out;
}

const CheckpointStore::Entry* CheckpointStore::find(const std::string& key) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void CheckpointStore::update(const std::string& key, int epochs, CheckpointBlob blob) {
  auto it = entries_.find(key);
  if (it != entries_.end() && it->second.epochs >= epochs) return;
  entries_[key] = Entry{epochs, std::move(blob)};
}

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.pop_size < 2) throw ConfigError("pop_size must be at least 2 (tournament needs two)");
  if (cfg.generations < 1) throw ConfigError("generations must be at least 1");
  if (cfg.workers < 1) throw ConfigError("workers must be at least 1");
  if (cfg.time_penalty_per_hour < 0) throw ConfigError("time penalty C must be >= 0");
  if (cfg.input.height < 2 || cfg.input.width < 2 || cfg.input.channels < 1)
    throw ConfigError("input shape must be at least 2x2x1");
  if (cfg.classes < 2) throw ConfigError("need at least two classes");
  const OperatorConfig& op = cfg.operators;
  if (op.p_crossover < 0 || op.p_crossover > 1 || op.p_mutation < 0 || op.p_mutation > 1)
    throw ConfigError("operator probabilities must lie in [0, 1]");
  if (std::abs(op.mutation_weights.sum() - 1.0) > 1e-9)
    throw ConfigError("mutation weights must sum to 1");
  if (op.max_retries < 1) throw ConfigError("max_retries must be positive");
  if (op.genome.filter_choices.empty()) throw ConfigError("filter choices must be non-empty");
  for (int f : op.genome.filter_choices)
    if (f < 1) throw ConfigError("filter counts must be positive");
  if (op.genome.depth_min < 1 || op.genome.depth_max < op.genome.depth_min)
    throw ConfigError("genome depth bounds must satisfy 1 <= min <= max");
  const EpochSchedule& s = cfg.schedule;
  if (s.generations_total != cfg.generations)
    throw ConfigError("schedule generations_total must match the configured generations");
  if (s.mode == EpochSchedule::Mode::Flat && s.flat_epochs < 1)
    throw ConfigError("flat schedule needs at least one epoch");
  if (s.mode == EpochSchedule::Mode::Linear && (s.lo < 1 || s.hi < s.lo))
    throw ConfigError("linear schedule needs 1 <= lo <= hi");
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

std::vector<std::array<int, 2>> layer_distribution(std::span<const Genome> population) {
  std::size_t max_len = 0;
  for (const Genome& g : population) max_len = std::max(max_len, g.size());
  std::vector<std::array<int, 2>> hist(max_len, {0, 0});
  for (const Genome& g : population)
    for (std::size_t d = 0; d < g.size(); ++d)
      ++hist[d][is_skip(g.layers[d]) ? 0 : 1];
  return hist;
}

namespace {

GenerationStats compute_stats(int generation, std::span<const Individual> population,
                              double wall_seconds) {
  GenerationStats s;
  s.generation = generation;
  s.wall_seconds = wall_seconds;
  s.fitness_min = s.accuracy_min = std::numeric_limits<double>::infinity();
  s.fitness_max = s.accuracy_max = -std::numeric_limits<double>::infinity();
  double fitness_sum = 0, accuracy_sum = 0, depth_sum = 0;
  std::vector<Genome> genomes;
  genomes.reserve(population.size());
  for (const Individual& ind : population) {
    s.fitness_min = std::min(s.fitness_min, ind.fitness);
    s.fitness_max = std::max(s.fitness_max, ind.fitness);
    s.accuracy_min = std::min(s.accuracy_min, ind.accuracy);
    s.accuracy_max = std::max(s.accuracy_max, ind.accuracy);
    fitness_sum += ind.fitness;
    accuracy_sum += ind.accuracy;
    depth_sum += static_cast<double>(ind.genome.size());
    genomes.push_back(ind.genome);
  }
  const double n = static_cast<double>(population.size());
  s.fitness_mean = fitness_sum / n;
  s.accuracy_mean = accuracy_sum / n;
  s.mean_depth = depth_sum / n;
  s.layer_histogram = layer_distribution(genomes);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Evaluation dispatch
// ---------------------------------------------------------------------------

namespace {

struct PendingJob {
  Genome genome;
  std::string key;
  std::optional<ResumeSource> resume;
};

std::string checkpoint_token(const std::string& key, int epochs) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(key)));
  return std::string(buf) + ":" + std::to_string(epochs);
}

}  // namespace

EvaluatePopulationResult evaluate_population(int generation,
                                             std::span<const Genome> genomes,
                                             Evaluator& evaluator, EvalCache& cache,
                                             CheckpointStore& store,
                                             const ExperimentConfig& cfg,
                                             std::vector<std::string>* failures_log) {
  const int target = epochs_for_generation(generation, cfg.schedule);

  // Plan one job per genome not already cached at this budget; duplicate keys
  // within the generation share a single job.
  std::vector<PendingJob> jobs;
  std::unordered_map<std::string, std::size_t> job_of_key;
  std::vector<std::string> keys(genomes.size());
  for (std::size_t slot = 0; slot < genomes.size(); ++slot) {
    keys[slot] = canonical_key(genomes[slot]);
    const std::string& key = keys[slot];
    if (cache.find(key, target) || job_of_key.count(key)) continue;
    PendingJob job{genomes[slot], key, std::nullopt};
    if (const CheckpointStore::Entry* entry = store.find(key);
        entry && entry->epochs < target)
      job.resume = ResumeSource{entry->epochs, entry->blob};
    job_of_key.emplace(key, jobs.size());
    jobs.push_back(std::move(job));
  }

  // Run jobs on up to cfg.workers threads. Outputs land in job order, so the
  // result is independent of scheduling.
  std::vector<EvalOutput> outputs(jobs.size());
  std::vector<std::optional<int>> resumed_from(jobs.size());
  if (!jobs.empty()) {
    std::atomic<std::size_t> next{0};
    const int worker_count = std::min<int>(cfg.workers, static_cast<int>(jobs.size()));
    auto work = [&](int worker_id) {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) break;
        EvalTask task{jobs[i].genome, jobs[i].key, target, jobs[i].resume, worker_id};
        if (jobs[i].resume) resumed_from[i] = jobs[i].resume->epochs;
        outputs[i] = evaluator.evaluate(task);
      }
    };
    if (worker_count == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(worker_count);
      for (int t = 0; t < worker_count; ++t) pool.emplace_back(work, t);
      for (std::thread& t : pool) t.join();
    }
  }

  // Commit in job order, then assemble per-slot individuals and events.
  EvaluatePopulationResult result;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    EvalOutput& out = outputs[i];
    out.record.checkpoint_ref = checkpoint_token(jobs[i].key, target);
    cache.insert(out.record);
    if (out.error.empty()) {
      store.update(jobs[i].key, target, out.checkpoint);
    } else if (failures_log) {
      failures_log->push_back("generation " + std::to_string(generation) + " " +
                              jobs[i].key + ": " + out.error);
    }
    result.new_wall_seconds += out.record.wall_seconds;
  }

  result.population.reserve(genomes.size());
  result.events.reserve(genomes.size());
  std::unordered_map<std::string, bool> seen;
  for (std::size_t slot = 0; slot < genomes.size(); ++slot) {
    const std::string& key = keys[slot];
    const EvaluationRecord* record = cache.find(key, target);
    const auto job_it = job_of_key.find(key);
    const bool computed_here = job_it != job_of_key.end() && !seen[key];
    seen[key] = true;

    Individual ind;
    ind.genome = genomes[slot];
    ind.key = key;
    ind.accuracy = record->accuracy;
    ind.eval_wall_seconds = record->wall_seconds;
    ind.fitness = regularised_fitness(record->accuracy, record->wall_seconds,
                                      cfg.time_penalty_per_hour);
    ind.epochs_trained = record->epochs;
    ind.checkpoint_ref = record->checkpoint_ref;

    EventRow row;
    row.generation = generation;
    row.key = key;
    row.epochs = target;
    row.accuracy = ind.accuracy;
    row.wall_seconds = ind.eval_wall_seconds;
    row.fitness = ind.fitness;
    row.cache_hit = !computed_here;
    if (computed_here) row.resumed_from = resumed_from[job_it->second];

    result.population.push_back(std::move(ind));
    result.events.push_back(std::move(row));
  }
  return result;
}

std::optional<std::size_t> apply_elitism(const Individual& elite,
                                         std::vector<Individual>& population) {
  for (const Individual& ind : population)
    if (ind.key == elite.key) return std::nullopt;
  std::size_t victim = 0;
  for (std::size_t i = 1; i < population.size(); ++i)
    if (population[i].fitness < population[victim].fitness) victim = i;
  population[victim] = elite;
  return victim;
}

// ---------------------------------------------------------------------------
// Evolution driver
// ---------------------------------------------------------------------------

EvolutionDriver::EvolutionDriver(ExperimentConfig cfg, Evaluator& evaluator)
    : cfg_(std::move(cfg)),
      evaluator_(evaluator),
      ga_rng_(derive_seed(cfg_.seed, stream::kGaLoop)) {
  validate_config(cfg_);
}

GenerationStats EvolutionDriver::step() {
  const int generation = generation_completed_ + 1;
  if (generation > cfg_.generations) throw std::logic_error("run already complete");

  std::vector<Genome> genomes;
  if (generation == 1) {
    genomes.reserve(cfg_.pop_size);
    for (int slot = 0; slot < cfg_.pop_size; ++slot) {
      Rng rng(derive_seed(cfg_.seed, stream::kInitGenome, 0,
                          static_cast<std::uint64_t>(slot)));
      genomes.push_back(random_genome(rng, cfg_.input, cfg_.operators.genome));
    }
  } else {
    genomes = next_generation(ga_rng_, population_, cfg_.input, cfg_.operators,
                              cfg_.pop_size);
  }

  EvaluatePopulationResult eval = evaluate_population(
      generation, genomes, evaluator_, cache_, store_, cfg_, &failures_);
  double wall = eval.new_wall_seconds;

  auto consider_best = [&](const Individual& cand) {
    if (!have_best_) {
      best_by_fitness_ = cand;
      best_by_accuracy_ = cand;
      have_best_ = true;
      return;
    }
    if (cand.fitness > best_by_fitness_.fitness) best_by_fitness_ = cand;
    if (cand.accuracy > best_by_accuracy_.accuracy) best_by_accuracy_ = cand;
  };
  for (const Individual& ind : eval.population) consider_best(ind);

  if (generation > 1) {
    std::size_t best_idx = 0;
    for (std::size_t i = 1; i < population_.size(); ++i)
      if (population_[i].fitness > population_[best_idx].fitness) best_idx = i;
    const Individual& elite_old = population_[best_idx];

    bool present = false;
    for (const Individual& ind : eval.population)
      if (ind.key == elite_old.key) { present = true; break; }

    if (!present) {
      // Retrain the elite forward to this generation's budget, then inject.
      const std::vector<Genome> one{elite_old.genome};
      EvaluatePopulationResult re = evaluate_population(
          generation, one, evaluator_, cache_, store_, cfg_, &failures_);
      wall += re.new_wall_seconds;
      consider_best(re.population[0]);
      apply_elitism(re.population[0], eval.population);
      eval.events.push_back(std::move(re.events[0]));
    }
  }

  population_ = std::move(eval.population);
  last_events_ = std::move(eval.events);
  generation_completed_ = generation;
  return compute_stats(generation, population_, wall);
}

DriverState EvolutionDriver::snapshot() const {
  DriverState s;
  s.generation_completed = generation_completed_;
  s.ga_rng_state = ga_rng_.state();
  s.population = population_;
  s.best_by_fitness = best_by_fitness_;
  s.best_by_accuracy = best_by_accuracy_;
  s.cache_records = cache_.records();
  for (const auto& [key, entry] : store_.entries())
    s.checkpoint_epochs.emplace_back(key, entry.epochs);
  return s;
}

void EvolutionDriver::restore(
    const DriverState& state,
    const std::vector<std::pair<std::string, CheckpointStore::Entry>>& checkpoints) {
  generation_completed_ = state.generation_completed;
  ga_rng_.set_state(state.ga_rng_state);
  population_ = state.population;
  best_by_fitness_ = state.best_by_fitness;
  best_by_accuracy_ = state.best_by_accuracy;
  have_best_ = !population_.empty();
  cache_ = EvalCache{};
  for (const EvaluationRecord& record : state.cache_records) cache_.insert(record);
  store_ = CheckpointStore{};
  for (const auto& [key, entry] : checkpoints) store_.update(key, entry.epochs, entry.blob);
}

RunResult run_evolution(const ExperimentConfig& cfg, Evaluator& evaluator) {
  EvolutionDriver driver(cfg, evaluator);
  RunResult result;
  while (!driver.done()) {
    result.history.push_back(driver.step());
    result.events.insert(result.events.end(), driver.last_events().begin(),
                         driver.last_events().end());
  }
  result.best_by_fitness = driver.best_by_fitness();
  result.best_by_accuracy = driver.best_by_accuracy();
  result.failures = driver.failures();
  return result;
}

}  // namespace evocnn
