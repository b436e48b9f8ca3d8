#pragma once

#include <iosfwd>
#include <memory>

#include "evocnn/evaluator.hpp"
#include "evocnn/manifest.hpp"
#include "evocnn/run_store.hpp"

namespace evocnn {

struct EvaluatorSetup {
  std::unique_ptr<Evaluator> evaluator;
  std::shared_ptr<const DatasetBundle> data;  // null for the surrogate
};

// Builds the evaluator named by the manifest, loading or generating the
// datasets a cnn run needs.
EvaluatorSetup make_evaluator(const RunManifest& manifest);

// Runs a fresh experiment against an initialised store, persisting after
// every generation. stop_after_generation > 0 checkpoints and returns early
// (the run can be picked up with resume). Returns the generation reached.
int execute_run(const LoadedManifest& manifest, RunStore& store,
                int stop_after_generation, std::ostream& log);

// Continues a stored run from its last completed generation. Completed runs
// are a no-op beyond refreshing the final summary outputs. worker_override
// replaces the manifest's worker count when positive (results don't depend
// on it).
int execute_resume(RunStore& store, int stop_after_generation, std::ostream& log,
                   int worker_override = 0);

}  // namespace evocnn
