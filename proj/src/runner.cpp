#include "evocnn/runner.hpp"

#include <fstream>
#include <ostream>

#include <json.hpp>

#include "evocnn/report.hpp"

namespace evocnn {

namespace {

std::shared_ptr<const DatasetBundle> build_datasets(const RunManifest& m) {
  auto bundle = std::make_shared<DatasetBundle>();
  const DatasetSpec& spec = m.dataset;
  if (spec.kind == "synthetic") {
    SyntheticSpec synth{spec.classes, spec.height, spec.width, 0, spec.noise};
    synth.n_per_class = spec.train_per_class;
    bundle->train = synthetic_dataset(synth, derive_seed(m.cfg.seed, stream::kSynthetic, 1));
    synth.n_per_class = spec.val_per_class;
    bundle->validation =
        synthetic_dataset(synth, derive_seed(m.cfg.seed, stream::kSynthetic, 2));
    bundle->validation.split = "validation";
    if (spec.test_per_class > 0) {
      synth.n_per_class = spec.test_per_class;
      bundle->test = synthetic_dataset(synth, derive_seed(m.cfg.seed, stream::kSynthetic, 3));
      bundle->test.split = "test";
    }
  } else if (spec.kind == "cifar10") {
    const Cifar10Data cifar = load_cifar10(spec.directory);
    auto [train, val] = desk_split(cifar.train, spec.train_per_class, spec.val_per_class,
                                   spec.downsample_to, m.cfg.seed);
    bundle->train = std::move(train);
    bundle->validation = std::move(val);
    if (spec.test_per_class > 0)
      bundle->test =
          desk_subset(cifar.test, spec.test_per_class, spec.downsample_to, m.cfg.seed);
  } else {
    throw ManifestError("dataset kind '" + spec.kind + "' provides no data to train on");
  }
  return bundle;
}

void write_best_outputs(RunStore& store, EvolutionDriver& driver) {
  nlohmann::ordered_json j{
      {"best_by_fitness",
       {{"key", driver.best_by_fitness().key},
        {"accuracy", driver.best_by_fitness().accuracy},
        {"fitness", driver.best_by_fitness().fitness},
        {"epochs", driver.best_by_fitness().epochs_trained},
        {"wall_seconds", driver.best_by_fitness().eval_wall_seconds}}},
      {"best_by_accuracy",
       {{"key", driver.best_by_accuracy().key},
        {"accuracy", driver.best_by_accuracy().accuracy},
        {"fitness", driver.best_by_accuracy().fitness},
        {"epochs", driver.best_by_accuracy().epochs_trained},
        {"wall_seconds", driver.best_by_accuracy().eval_wall_seconds}}}};
  std::ofstream out(store.dir() / "best.json", std::ios::binary | std::ios::trunc);
  out << j.dump(2) << "\n";

  const auto save_blob = [&](const std::string& key, const char* filename) {
    const CheckpointStore::Entry* entry = driver.checkpoint_store().find(key);
    if (!entry || !entry->blob) return;
    std::ofstream ck(store.dir() / filename, std::ios::binary | std::ios::trunc);
    ck.write(reinterpret_cast<const char*>(entry->blob->data()),
             static_cast<std::streamsize>(entry->blob->size()));
  };
  save_blob(driver.best_by_fitness().key, "best_fitness.ckpt");
  save_blob(driver.best_by_accuracy().key, "best_accuracy.ckpt");
}

int drive(EvolutionDriver& driver, const LoadedManifest& loaded, RunStore& store,
          int stop_after_generation, std::ostream& log) {
  while (!driver.done()) {
    const GenerationStats stats = driver.step();
    store.append_generation(stats, driver.last_events(), driver.snapshot(),
                            driver.checkpoint_store());
    log << "generation " << stats.generation << ": fitness max " << stats.fitness_max
        << " mean " << stats.fitness_mean << ", accuracy max " << stats.accuracy_max
        << ", eval " << stats.wall_seconds << " s\n";
    for (const std::string& failure : driver.failures()) log << "  warning: " << failure << "\n";
    if (stop_after_generation > 0 && driver.generation_completed() >= stop_after_generation &&
        !driver.done()) {
      log << "stopping after generation " << driver.generation_completed()
          << " (state saved; use resume to continue)\n";
      return driver.generation_completed();
    }
  }
  write_summary(store, loaded.manifest);
  write_best_outputs(store, driver);
  log << "run complete: best fitness " << driver.best_by_fitness().fitness
      << " (" << driver.best_by_fitness().key << "), best accuracy "
      << driver.best_by_accuracy().accuracy << " (" << driver.best_by_accuracy().key << ")\n";
  return driver.generation_completed();
}

}  // namespace

EvaluatorSetup make_evaluator(const RunManifest& manifest) {
  EvaluatorSetup setup;
  if (manifest.evaluator_kind == "surrogate") {
    setup.evaluator = std::make_unique<SurrogateEvaluator>(
        manifest.surrogate, manifest.cfg.input, manifest.cfg.classes);
    return setup;
  }
  setup.data = build_datasets(manifest);
  if (setup.data->train.images.h != manifest.cfg.input.height ||
      setup.data->train.images.w != manifest.cfg.input.width ||
      setup.data->train.images.c != manifest.cfg.input.channels)
    throw ManifestError("dataset resolution does not match the configured input shape");
  setup.evaluator = std::make_unique<CnnEvaluator>(
      setup.data, manifest.training, manifest.fitness_split, manifest.cfg.seed);
  return setup;
}

int execute_run(const LoadedManifest& manifest, RunStore& store,
                int stop_after_generation, std::ostream& log) {
  EvaluatorSetup setup = make_evaluator(manifest.manifest);
  EvolutionDriver driver(manifest.manifest.cfg, *setup.evaluator);
  return drive(driver, manifest, store, stop_after_generation, log);
}

int execute_resume(RunStore& store, int stop_after_generation, std::ostream& log,
                   int worker_override) {
  LoadedManifest loaded;
  loaded.raw_text = store.manifest_text();
  loaded.hash = manifest_hash(loaded.raw_text);
  loaded.manifest = parse_manifest_text(loaded.raw_text);
  if (worker_override > 0) loaded.manifest.cfg.workers = worker_override;

  const DriverState state = store.load_state();
  store.truncate_to(state.generation_completed);

  EvaluatorSetup setup = make_evaluator(loaded.manifest);
  EvolutionDriver driver(loaded.manifest.cfg, *setup.evaluator);
  driver.restore(state, store.load_checkpoints(state));

  if (driver.done()) {
    write_summary(store, loaded.manifest);
    write_best_outputs(store, driver);
    log << "run already complete (generation " << state.generation_completed << ")\n";
    return state.generation_completed;
  }
  log << "resuming after generation " << state.generation_completed << "\n";
  return drive(driver, loaded, store, stop_after_generation, log);
}

}  // namespace evocnn
