#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "evocnn/engine.hpp"
#include "evocnn/evaluator.hpp"
#include "evocnn/manifest.hpp"
#include "evocnn/report.hpp"
#include "evocnn/runner.hpp"

namespace py = pybind11;

namespace {

using namespace evocnn;

ShapeSpec shape(int height, int width, int channels) { return {height, width, channels}; }

GenomeConfig genome_config(const std::vector<int>& filters, int depth_min, int depth_max) {
  GenomeConfig cfg;
  if (!filters.empty()) cfg.filter_choices = filters;
  cfg.depth_min = depth_min;
  cfg.depth_max = depth_max;
  return cfg;
}

py::dict run_experiment(const std::string& manifest_json) {
  const RunManifest manifest = parse_manifest_text(manifest_json);
  EvaluatorSetup setup = make_evaluator(manifest);
  const RunResult result = run_evolution(manifest.cfg, *setup.evaluator);

  py::list history;
  for (const GenerationStats& s : result.history) {
    py::dict row;
    row["generation"] = s.generation;
    row["fitness_min"] = s.fitness_min;
    row["fitness_mean"] = s.fitness_mean;
    row["fitness_max"] = s.fitness_max;
    row["accuracy_min"] = s.accuracy_min;
    row["accuracy_mean"] = s.accuracy_mean;
    row["accuracy_max"] = s.accuracy_max;
    row["mean_depth"] = s.mean_depth;
    row["wall_seconds"] = s.wall_seconds;
    history.append(row);
  }
  const auto individual = [](const Individual& ind) {
    py::dict d;
    d["key"] = ind.key;
    d["accuracy"] = ind.accuracy;
    d["fitness"] = ind.fitness;
    d["epochs"] = ind.epochs_trained;
    d["wall_seconds"] = ind.eval_wall_seconds;
    return d;
  };
  py::dict out;
  out["history"] = history;
  out["best_by_fitness"] = individual(result.best_by_fitness);
  out["best_by_accuracy"] = individual(result.best_by_accuracy);
  out["evaluations"] = static_cast<int>(result.events.size());
  return out;
}

EpochSchedule make_schedule(const std::string& mode, int generations, int epochs,
                            int lo, int hi) {
  EpochSchedule s;
  s.generations_total = generations;
  if (mode == "flat") {
    s.mode = EpochSchedule::Mode::Flat;
    s.flat_epochs = epochs;
  } else if (mode == "linear") {
    s.mode = EpochSchedule::Mode::Linear;
    s.lo = lo;
    s.hi = hi;
  } else {
    throw std::invalid_argument("mode must be 'flat' or 'linear'");
  }
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Genetic search over CNN topologies with wall-time regularised "
            "fitness and generation-indexed partial training";

  // genomes are passed as canonical key strings, e.g. "S64.128|PM|PA"
  m.def(
      "random_genome",
      [](std::uint64_t seed, int height, int width, int channels,
         const std::vector<int>& filters, int depth_min, int depth_max) {
        Rng rng(seed);
        return canonical_key(random_genome(rng, shape(height, width, channels),
                                           genome_config(filters, depth_min, depth_max)));
      },
      py::arg("seed"), py::arg("height") = 32, py::arg("width") = 32,
      py::arg("channels") = 3, py::arg("filters") = std::vector<int>{64, 128, 256},
      py::arg("depth_min") = 10, py::arg("depth_max") = 120);

  m.def(
      "output_shape",
      [](const std::string& key, int height, int width, int channels) {
        const ShapeSpec s = output_shape(parse_key(key), shape(height, width, channels));
        return py::make_tuple(s.height, s.width, s.channels);
      },
      py::arg("key"), py::arg("height") = 32, py::arg("width") = 32, py::arg("channels") = 3);

  m.def(
      "cost_estimate",
      [](const std::string& key, int height, int width, int channels, int classes) {
        const CostEstimate c =
            cost_estimate(parse_key(key), shape(height, width, channels), classes);
        py::dict d;
        d["mac_count"] = c.mac_count;
        d["param_count"] = c.param_count;
        return d;
      },
      py::arg("key"), py::arg("height") = 32, py::arg("width") = 32, py::arg("channels") = 3,
      py::arg("classes") = 10);

  m.def(
      "crossover",
      [](std::uint64_t seed, const std::string& a, const std::string& b, int height,
         int width, int channels) {
        Rng rng(seed);
        OperatorConfig cfg;
        const auto children =
            crossover(rng, parse_key(a), parse_key(b), shape(height, width, channels), cfg);
        return py::make_tuple(canonical_key(children.first), canonical_key(children.second));
      },
      py::arg("seed"), py::arg("a"), py::arg("b"), py::arg("height") = 32,
      py::arg("width") = 32, py::arg("channels") = 3);

  m.def(
      "mutate",
      [](std::uint64_t seed, const std::string& key, int height, int width, int channels,
         const std::vector<int>& filters) {
        Rng rng(seed);
        OperatorConfig cfg;
        if (!filters.empty()) cfg.genome.filter_choices = filters;
        return canonical_key(
            mutate(rng, parse_key(key), shape(height, width, channels), cfg));
      },
      py::arg("seed"), py::arg("key"), py::arg("height") = 32, py::arg("width") = 32,
      py::arg("channels") = 3, py::arg("filters") = std::vector<int>{64, 128, 256});

  m.def(
      "epochs_for_generation",
      [](int generation, const std::string& mode, int generations, int epochs, int lo,
         int hi) {
        return epochs_for_generation(generation,
                                     make_schedule(mode, generations, epochs, lo, hi));
      },
      py::arg("generation"), py::arg("mode") = "linear", py::arg("generations") = 20,
      py::arg("epochs") = 60, py::arg("lo") = 30, py::arg("hi") = 70);

  m.def("regularised_fitness", &regularised_fitness, py::arg("accuracy"),
        py::arg("wall_seconds"), py::arg("penalty_per_hour"));

  m.def(
      "lr_for_epoch",
      [](int epoch, double initial, double decay_factor,
         const std::vector<int>& decay_after_epochs) {
        return lr_for_epoch(epoch, LrSchedule{initial, decay_factor, decay_after_epochs});
      },
      py::arg("epoch"), py::arg("initial") = 0.1, py::arg("decay_factor") = 0.9,
      py::arg("decay_after_epochs") = std::vector<int>{1, 26, 43});

  m.def(
      "surrogate_a_max",
      [](const std::string& key) { return surrogate_a_max(parse_key(key)); }, py::arg("key"));

  m.def(
      "surrogate_accuracy",
      [](const std::string& key, double epochs, double tau) {
        return surrogate_accuracy(parse_key(key), epochs, tau);
      },
      py::arg("key"), py::arg("epochs"), py::arg("tau") = 25.0);

  m.def(
      "render_architecture",
      [](const std::string& key) { return render_architecture(key); }, py::arg("key"));

  m.def("run_experiment", &run_experiment, py::arg("manifest_json"),
        "Run a full experiment from a JSON manifest string and return its "
        "history and best individuals.");
}
