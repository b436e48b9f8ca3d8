#include "evocnn/evaluator.hpp"

#include <algorithm>
#include <cmath>

namespace evocnn {

double surrogate_a_max(const Genome& g) {
  const int skips = skip_count(g);
  const int pools = pool_count(g);

  double alternation = 0.0;
  if (g.size() >= 2) {
    int changes = 0;
    for (std::size_t i = 1; i < g.layers.size(); ++i)
      changes += is_skip(g.layers[i]) != is_skip(g.layers[i - 1]) ? 1 : 0;
    alternation = static_cast<double>(changes) / (g.size() - 1);
  }

  double filter_quality = 0.0;
  if (skips > 0) {
    double sum = 0.0;
    for (const LayerGene& gene : g.layers)
      if (const auto* skip = std::get_if<SkipGene>(&gene))
        sum += std::min(1.0, std::log2(static_cast<double>(skip->filters_1)) / 7.0) +
               std::min(1.0, std::log2(static_cast<double>(skip->filters_2)) / 7.0);
    filter_quality = sum / (2.0 * skips);
  }

  const double value = 0.30 + 0.25 * (1.0 - std::exp(-skips / 4.0)) +
                       0.15 * (1.0 - std::exp(-pools / 2.0)) +
                       0.20 * alternation + 0.08 * filter_quality;
  return std::clamp(value, 0.0, 0.97);
}

double surrogate_accuracy(const Genome& g, double epochs, double tau) {
  return surrogate_a_max(g) * (1.0 - std::exp(-epochs / tau));
}

double simulated_seconds(std::uint64_t mac_count, int delta_epochs,
                         const SurrogateParams& p, bool from_scratch) {
  return p.kappa * static_cast<double>(mac_count) * delta_epochs +
         (from_scratch ? p.overhead_seconds : 0.0);
}

EvalOutput SurrogateEvaluator::evaluate(const EvalTask& task) {
  const bool from_scratch = !task.resume.has_value();
  const int start_epochs = from_scratch ? 0 : task.resume->epochs;
  const CostEstimate cost = cost_estimate(task.genome, input_, classes_);

  EvalOutput out;
  out.record.canonical_key = task.key;
  out.record.epochs = task.target_epochs;
  out.record.accuracy = surrogate_accuracy(task.genome, task.target_epochs, params_.tau);
  out.record.wall_seconds = simulated_seconds(
      cost.mac_count, task.target_epochs - start_epochs, params_, from_scratch);
  out.record.worker_id = task.worker_id;
  return out;
}

CnnEvaluator::CnnEvaluator(std::shared_ptr<const DatasetBundle> data, TrainHyper hyper,
                           std::string fitness_split, std::uint64_t run_seed,
                           const Clock* clock)
    : data_(std::move(data)),
      hyper_(std::move(hyper)),
      fitness_split_(std::move(fitness_split)),
      run_seed_(run_seed),
      clock_(clock) {}

EvalOutput CnnEvaluator::evaluate(const EvalTask& task) {
  const Clock& clock = clock_ ? *clock_ : default_clock_;
  EvalOutput out;
  out.record.canonical_key = task.key;
  out.record.epochs = task.target_epochs;
  out.record.worker_id = task.worker_id;

  const double started = clock.now_seconds();
  try {
    ModelState model =
        task.resume && task.resume->blob
            ? deserialize_model(*task.resume->blob)
            : init_model(task.genome,
                         ShapeSpec{data_->train.images.h, data_->train.images.w,
                                   data_->train.images.c},
                         data_->train.classes, run_seed_);
    if (task.resume && canonical_key(model.genome) != task.key)
      throw CheckpointError("checkpoint genome does not match evaluation task");

    train(model, data_->train, task.target_epochs, hyper_);
    const Dataset& fold =
        fitness_split_ == "test" && !data_->test.labels.empty() ? data_->test
                                                                : data_->validation;
    out.record.accuracy = test_accuracy(model, fold);
    out.record.wall_seconds = clock.now_seconds() - started;
    out.checkpoint =
        std::make_shared<const std::vector<std::uint8_t>>(serialize_model(model));
  } catch (const std::exception& e) {
    out.record.accuracy = 0.0;
    out.record.wall_seconds = clock.now_seconds() - started;
    out.error = e.what();
  }
  return out;
}

}  // namespace evocnn
