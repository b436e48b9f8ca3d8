#include "evocnn/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace evocnn {

namespace {

using nlohmann::json;

// Typed field access with manifest-specific diagnostics.
template <typename T>
T get_or(const json& j, const char* field, T fallback) {
  if (!j.contains(field)) return fallback;
  try {
    return j.at(field).get<T>();
  } catch (const json::exception&) {
    throw ManifestError(std::string("manifest field '") + field + "' has the wrong type");
  }
}

const json* child(const json& j, const char* field) {
  if (!j.contains(field)) return nullptr;
  if (!j.at(field).is_object())
    throw ManifestError(std::string("manifest field '") + field + "' must be an object");
  return &j.at(field);
}

EpochSchedule parse_schedule(const json* j, int generations) {
  EpochSchedule s;
  s.generations_total = generations;
  if (!j) return s;
  const std::string mode = get_or<std::string>(*j, "mode", "flat");
  if (mode == "flat") {
    s.mode = EpochSchedule::Mode::Flat;
    s.flat_epochs = get_or<int>(*j, "epochs", 60);
  } else if (mode == "linear") {
    s.mode = EpochSchedule::Mode::Linear;
    s.lo = get_or<int>(*j, "lo", 30);
    s.hi = get_or<int>(*j, "hi", 70);
  } else {
    throw ManifestError("schedule.mode must be 'flat' or 'linear'");
  }
  return s;
}

OperatorConfig parse_operators(const json* j) {
  OperatorConfig op;
  if (!j) return op;
  op.p_crossover = get_or<double>(*j, "p_crossover", op.p_crossover);
  op.p_mutation = get_or<double>(*j, "p_mutation", op.p_mutation);
  op.max_retries = get_or<int>(*j, "max_retries", op.max_retries);
  if (const json* w = child(*j, "mutation_weights")) {
    op.mutation_weights.insert_skip = get_or<double>(*w, "insert_skip", 0.7);
    op.mutation_weights.insert_pool = get_or<double>(*w, "insert_pool", 0.1);
    op.mutation_weights.remove = get_or<double>(*w, "remove", 0.1);
    op.mutation_weights.alter = get_or<double>(*w, "alter", 0.1);
  }
  return op;
}

GenomeConfig parse_genome(const json* j) {
  GenomeConfig g;
  if (!j) return g;
  g.filter_choices = get_or<std::vector<int>>(*j, "filters", g.filter_choices);
  g.depth_min = get_or<int>(*j, "depth_min", g.depth_min);
  g.depth_max = get_or<int>(*j, "depth_max", g.depth_max);
  return g;
}

DatasetSpec parse_dataset(const json* j) {
  DatasetSpec d;
  if (!j) return d;
  d.kind = get_or<std::string>(*j, "kind", d.kind);
  if (d.kind != "shape" && d.kind != "synthetic" && d.kind != "cifar10")
    throw ManifestError("dataset.kind must be 'shape', 'synthetic' or 'cifar10'");
  d.height = get_or<int>(*j, "height", d.kind == "cifar10" ? 32 : d.height);
  d.width = get_or<int>(*j, "width", d.kind == "cifar10" ? 32 : d.width);
  d.channels = get_or<int>(*j, "channels", d.channels);
  d.classes = get_or<int>(*j, "classes", d.classes);
  d.train_per_class = get_or<int>(*j, "train_per_class", d.train_per_class);
  d.val_per_class = get_or<int>(*j, "val_per_class", d.val_per_class);
  d.test_per_class = get_or<int>(*j, "test_per_class", d.test_per_class);
  d.noise = get_or<double>(*j, "noise", d.noise);
  d.downsample_to = get_or<int>(*j, "downsample_to", d.downsample_to);
  d.directory = get_or<std::string>(*j, "directory", d.directory);
  if (d.kind == "cifar10") {
    if (d.directory.empty()) throw ManifestError("cifar10 dataset needs 'directory'");
    d.channels = 3;
    d.classes = 10;
    const int res = d.downsample_to > 0 ? d.downsample_to : 32;
    d.height = d.width = res;
  }
  return d;
}

}  // namespace

RunManifest parse_manifest_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ManifestError("manifest root must be a JSON object");

  RunManifest m;
  m.cfg.pop_size = get_or<int>(j, "pop_size", m.cfg.pop_size);
  m.cfg.generations = get_or<int>(j, "generations", m.cfg.generations);
  m.cfg.seed = get_or<std::uint64_t>(j, "seed", m.cfg.seed);
  m.cfg.workers = get_or<int>(j, "workers", m.cfg.workers);
  m.output_dir = get_or<std::string>(j, "output_dir", "");

  if (const json* f = child(j, "fitness")) {
    m.cfg.time_penalty_per_hour =
        get_or<double>(*f, "time_penalty_per_hour", m.cfg.time_penalty_per_hour);
    m.fitness_split = get_or<std::string>(*f, "split", m.fitness_split);
    if (m.fitness_split != "validation" && m.fitness_split != "test")
      throw ManifestError("fitness.split must be 'validation' or 'test'");
  }

  m.cfg.schedule = parse_schedule(child(j, "schedule"), m.cfg.generations);
  m.cfg.operators = parse_operators(child(j, "operators"));
  m.cfg.operators.genome = parse_genome(child(j, "genome"));
  m.dataset = parse_dataset(child(j, "dataset"));
  m.cfg.input = ShapeSpec{m.dataset.height, m.dataset.width, m.dataset.channels};
  m.cfg.classes = m.dataset.classes;

  if (const json* e = child(j, "evaluator")) {
    m.evaluator_kind = get_or<std::string>(*e, "kind", m.evaluator_kind);
    if (m.evaluator_kind != "surrogate" && m.evaluator_kind != "cnn")
      throw ManifestError("evaluator.kind must be 'surrogate' or 'cnn'");
    if (const json* s = child(*e, "surrogate")) {
      m.surrogate.kappa = get_or<double>(*s, "kappa", m.surrogate.kappa);
      m.surrogate.tau = get_or<double>(*s, "tau", m.surrogate.tau);
      m.surrogate.overhead_seconds =
          get_or<double>(*s, "overhead_seconds", m.surrogate.overhead_seconds);
    }
    if (m.surrogate.kappa <= 0 || m.surrogate.tau <= 0 || m.surrogate.overhead_seconds < 0)
      throw ManifestError("surrogate constants must be positive (overhead >= 0)");
  }

  if (const json* t = child(j, "training")) {
    m.training.batch_size = get_or<int>(*t, "batch_size", m.training.batch_size);
    m.training.momentum = get_or<double>(*t, "momentum", m.training.momentum);
    if (const json* lr = child(*t, "lr")) {
      m.training.lr.initial = get_or<double>(*lr, "initial", m.training.lr.initial);
      m.training.lr.decay_factor =
          get_or<double>(*lr, "decay_factor", m.training.lr.decay_factor);
      if (lr->contains("decay_after_epochs"))
        m.training.lr.decay_after_epochs =
            get_or<std::vector<int>>(*lr, "decay_after_epochs", {});
      else
        m.training.lr.decay_after_epochs =
            m.cfg.schedule.mode == EpochSchedule::Mode::Linear
                ? std::vector<int>{1, 30, 50}
                : std::vector<int>{1, 26, 43};
    } else {
      if (m.cfg.schedule.mode == EpochSchedule::Mode::Linear)
        m.training.lr.decay_after_epochs = {1, 30, 50};
    }
  } else if (m.cfg.schedule.mode == EpochSchedule::Mode::Linear) {
    m.training.lr.decay_after_epochs = {1, 30, 50};
  }

  if (m.training.batch_size < 1) throw ManifestError("training.batch_size must be positive");
  for (std::size_t i = 1; i < m.training.lr.decay_after_epochs.size(); ++i)
    if (m.training.lr.decay_after_epochs[i] <= m.training.lr.decay_after_epochs[i - 1])
      throw ManifestError("lr.decay_after_epochs must be strictly increasing");

  if (m.evaluator_kind == "cnn" && m.dataset.kind == "shape")
    throw ManifestError("the cnn evaluator needs a synthetic or cifar10 dataset");

  try {
    validate_config(m.cfg);
  } catch (const ConfigError& e) {
    throw ManifestError(e.what());
  }
  return m;
}

std::uint64_t manifest_hash(const std::string& raw_text) { return fnv1a64(raw_text); }

LoadedManifest load_manifest_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  LoadedManifest loaded;
  loaded.raw_text = buf.str();
  loaded.hash = manifest_hash(loaded.raw_text);
  loaded.manifest = parse_manifest_text(loaded.raw_text);
  return loaded;
}

std::string approach_label(const ExperimentConfig& cfg) {
  const bool penalised = cfg.time_penalty_per_hour > 0;
  const bool linear = cfg.schedule.mode == EpochSchedule::Mode::Linear;
  if (penalised && linear) return "combined";
  if (penalised) return "regularised";
  if (linear) return "partial";
  return "base";
}

}  // namespace evocnn
