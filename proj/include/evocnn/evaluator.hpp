#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evocnn/data.hpp"
#include "evocnn/genome.hpp"
#include "evocnn/nn.hpp"

namespace evocnn {

// Output of one fitness evaluation. wall_seconds covers the work of this
// evaluation only: a resumed evaluation reports the incremental time from the
// start of resumed training to the end of testing.
struct EvaluationRecord {
  std::string canonical_key;
  int epochs = 0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
  int worker_id = -1;
  std::string checkpoint_ref;
};

using CheckpointBlob = std::shared_ptr<const std::vector<std::uint8_t>>;

struct ResumeSource {
  int epochs = 0;
  CheckpointBlob blob;  // null for evaluators without stored weights
};

struct EvalTask {
  Genome genome;
  std::string key;
  int target_epochs = 0;
  std::optional<ResumeSource> resume;
  int worker_id = -1;
};

struct EvalOutput {
  EvaluationRecord record;
  CheckpointBlob checkpoint;  // null when the evaluator keeps no weights
  std::string error;          // non-empty when evaluation failed
};

// Fitness-evaluation boundary. evaluate() must be safe to call concurrently
// from several workers, and deterministic given (genome, target epochs, seed).
class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual EvalOutput evaluate(const EvalTask& task) = 0;
};

// ---------------------------------------------------------------------------
// Wall clock
// ---------------------------------------------------------------------------

class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_seconds() const = 0;
};

class SteadyClock final : public Clock {
 public:
  double now_seconds() const override {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  }
};

// ---------------------------------------------------------------------------
// Deterministic surrogate
// ---------------------------------------------------------------------------

// Documented landscape constants; they make GA dynamics cheap to test and are
// not claims about real CNN behaviour.
struct SurrogateParams {
  double kappa = 2e-8;            // simulated seconds per MAC per epoch
  double tau = 25.0;              // learning-curve time constant, epochs
  double overhead_seconds = 30.0; // charged once per from-scratch evaluation
};

// Asymptotic accuracy of a genome: a saturating reward for skip depth and
// pooling, a bonus for alternating skip/pool structure, and diminishing
// returns in filter width (saturating at 128). Always within [0, 0.97].
double surrogate_a_max(const Genome& g);

// a_max * (1 - exp(-epochs / tau))
double surrogate_accuracy(const Genome& g, double epochs, double tau);

// kappa * mac_count * delta_epochs, plus the fixed overhead when starting
// from scratch. Resumed chains therefore sum exactly to a direct evaluation.
double simulated_seconds(std::uint64_t mac_count, int delta_epochs,
                         const SurrogateParams& p, bool from_scratch);

class SurrogateEvaluator final : public Evaluator {
 public:
  SurrogateEvaluator(SurrogateParams params, ShapeSpec input, int classes)
      : params_(params), input_(input), classes_(classes) {}

  EvalOutput evaluate(const EvalTask& task) override;

  const SurrogateParams& params() const { return params_; }

 private:
  SurrogateParams params_;
  ShapeSpec input_;
  int classes_;
};

// ---------------------------------------------------------------------------
// Real CNN evaluator
// ---------------------------------------------------------------------------

struct DatasetBundle {
  Dataset train;
  Dataset validation;
  Dataset test;  // may be empty
};

class CnnEvaluator final : public Evaluator {
 public:
  // fitness_split selects which partition accuracy is measured on
  // ("validation" keeps the test fold out of the evolution loop).
  CnnEvaluator(std::shared_ptr<const DatasetBundle> data, TrainHyper hyper,
               std::string fitness_split, std::uint64_t run_seed,
               const Clock* clock = nullptr);

  EvalOutput evaluate(const EvalTask& task) override;

 private:
  std::shared_ptr<const DatasetBundle> data_;
  TrainHyper hyper_;
  std::string fitness_split_;
  std::uint64_t run_seed_;
  const Clock* clock_;
  SteadyClock default_clock_;
};

}  // namespace evocnn
