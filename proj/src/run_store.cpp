#include "evocnn/run_store.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace evocnn {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RunStoreError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RunStoreError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw RunStoreError("short write to " + path.string());
}

void append_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw RunStoreError("cannot append to " + path.string());
  out << text;
  out.flush();
  if (!out) throw RunStoreError("short write to " + path.string());
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ordered_json individual_to_json(const Individual& ind) {
  return ordered_json{{"key", ind.key},
                      {"accuracy", ind.accuracy},
                      {"wall_seconds", ind.eval_wall_seconds},
                      {"fitness", ind.fitness},
                      {"epochs", ind.epochs_trained},
                      {"checkpoint_ref", ind.checkpoint_ref}};
}

Individual individual_from_json(const ordered_json& j) {
  Individual ind;
  ind.key = j.at("key").get<std::string>();
  ind.genome = parse_key(ind.key);
  ind.accuracy = j.at("accuracy").get<double>();
  ind.eval_wall_seconds = j.at("wall_seconds").get<double>();
  ind.fitness = j.at("fitness").get<double>();
  ind.epochs_trained = j.at("epochs").get<int>();
  ind.checkpoint_ref = j.at("checkpoint_ref").get<std::string>();
  return ind;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string stats_to_jsonl(const GenerationStats& s) {
  ordered_json hist = ordered_json::array();
  for (const auto& row : s.layer_histogram) hist.push_back({row[0], row[1]});
  const ordered_json j{{"generation", s.generation},
                       {"fitness_min", s.fitness_min},
                       {"fitness_mean", s.fitness_mean},
                       {"fitness_max", s.fitness_max},
                       {"accuracy_min", s.accuracy_min},
                       {"accuracy_mean", s.accuracy_mean},
                       {"accuracy_max", s.accuracy_max},
                       {"mean_depth", s.mean_depth},
                       {"wall_seconds", s.wall_seconds},
                       {"layer_histogram", hist}};
  return j.dump();
}

GenerationStats stats_from_jsonl(const std::string& line) {
  GenerationStats s;
  try {
    const ordered_json j = ordered_json::parse(line);
    s.generation = j.at("generation").get<int>();
    s.fitness_min = j.at("fitness_min").get<double>();
    s.fitness_mean = j.at("fitness_mean").get<double>();
    s.fitness_max = j.at("fitness_max").get<double>();
    s.accuracy_min = j.at("accuracy_min").get<double>();
    s.accuracy_mean = j.at("accuracy_mean").get<double>();
    s.accuracy_max = j.at("accuracy_max").get<double>();
    s.mean_depth = j.at("mean_depth").get<double>();
    s.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& row : j.at("layer_histogram"))
      s.layer_histogram.push_back({row.at(0).get<int>(), row.at(1).get<int>()});
  } catch (const ordered_json::exception& e) {
    throw RunStoreError(std::string("bad history record: ") + e.what());
  }
  return s;
}

std::string event_to_csv(const EventRow& row) {
  std::string line = std::to_string(row.generation);
  line += ',';
  line += row.key;
  line += ',';
  line += std::to_string(row.epochs);
  line += ',';
  line += format_double(row.accuracy);
  line += ',';
  line += format_double(row.wall_seconds);
  line += ',';
  line += format_double(row.fitness);
  line += ',';
  line += row.cache_hit ? '1' : '0';
  line += ',';
  if (row.resumed_from) line += std::to_string(*row.resumed_from);
  return line;
}

namespace {

double parse_double_field(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw RunStoreError("bad numeric field in events.csv: '" + s + "'");
  return v;
}

}  // namespace

EventRow event_from_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  if (fields.size() != 8) throw RunStoreError("events.csv row must have 8 fields");
  EventRow row;
  row.generation = std::stoi(fields[0]);
  row.key = fields[1];
  row.epochs = std::stoi(fields[2]);
  row.accuracy = parse_double_field(fields[3]);
  row.wall_seconds = parse_double_field(fields[4]);
  row.fitness = parse_double_field(fields[5]);
  row.cache_hit = fields[6] == "1";
  if (!fields[7].empty()) row.resumed_from = std::stoi(fields[7]);
  return row;
}

// ---------------------------------------------------------------------------
// RunStore
// ---------------------------------------------------------------------------

RunStore RunStore::create(const std::filesystem::path& dir, const std::string& manifest_text) {
  std::filesystem::create_directories(dir);
  RunStore store(dir);
  if (store.has_state())
    throw RunStoreError(dir.string() + " already contains a run; use resume");
  write_text_file(store.manifest_path(), manifest_text);
  store.manifest_text_ = manifest_text;
  std::filesystem::create_directories(dir / "checkpoints");
  write_text_file(store.history_path(), "");
  write_text_file(store.events_path(), std::string(kEventCsvHeader) + "\n");
  return store;
}

RunStore RunStore::open(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir)) throw RunStoreError("no such run directory: " + dir.string());
  RunStore store(dir);
  if (!std::filesystem::exists(store.manifest_path()))
    throw RunStoreError(dir.string() + " has no manifest.json");
  store.manifest_text_ = read_text_file(store.manifest_path());
  return store;
}

bool RunStore::has_state() const { return std::filesystem::exists(state_path()); }

std::filesystem::path RunStore::checkpoint_file(const std::string& key) const {
  return dir_ / "checkpoints" / (hash_hex(fnv1a64(key)) + ".ckpt");
}

void RunStore::append_generation(const GenerationStats& stats,
                                 std::span<const EventRow> events,
                                 const DriverState& state, const CheckpointStore& store) {
  append_text_file(history_path(), stats_to_jsonl(stats) + "\n");
  std::string rows;
  for (const EventRow& row : events) rows += event_to_csv(row) + "\n";
  append_text_file(events_path(), rows);

  ordered_json checkpoints = ordered_json::array();
  for (const auto& [key, entry] : store.entries()) {
    std::string file;
    if (entry.blob) {
      const std::filesystem::path path = checkpoint_file(key);
      const auto it = persisted_epochs_.find(key);
      if (it == persisted_epochs_.end() || it->second < entry.epochs) {
        const std::filesystem::path tmp = path.string() + ".tmp";
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(entry.blob->data()),
                  static_cast<std::streamsize>(entry.blob->size()));
        out.flush();
        if (!out) throw RunStoreError("cannot write checkpoint " + path.string());
        out.close();
        std::filesystem::rename(tmp, path);
        persisted_epochs_[key] = entry.epochs;
      }
      file = (std::filesystem::path("checkpoints") / path.filename()).string();
    }
    checkpoints.push_back({{"key", key}, {"epochs", entry.epochs}, {"file", file}});
  }

  ordered_json population = ordered_json::array();
  for (const Individual& ind : state.population) population.push_back(individual_to_json(ind));
  ordered_json cache = ordered_json::array();
  for (const EvaluationRecord& r : state.cache_records)
    cache.push_back(ordered_json{{"key", r.canonical_key},
                                 {"epochs", r.epochs},
                                 {"accuracy", r.accuracy},
                                 {"wall_seconds", r.wall_seconds},
                                 {"worker_id", r.worker_id},
                                 {"checkpoint_ref", r.checkpoint_ref}});

  const ordered_json j{{"format_version", 1},
                       {"manifest_hash", hash_hex(manifest_hash(manifest_text_))},
                       {"generation_completed", state.generation_completed},
                       {"ga_rng_state", state.ga_rng_state},
                       {"population", population},
                       {"best_by_fitness", individual_to_json(state.best_by_fitness)},
                       {"best_by_accuracy", individual_to_json(state.best_by_accuracy)},
                       {"cache", cache},
                       {"checkpoints", checkpoints}};

  const std::filesystem::path tmp = state_path().string() + ".tmp";
  write_text_file(tmp, j.dump(2) + "\n");
  std::filesystem::rename(tmp, state_path());
}

DriverState RunStore::load_state() const {
  if (!has_state()) throw RunStoreError(dir_.string() + " has no state.json");
  ordered_json j;
  try {
    j = ordered_json::parse(read_text_file(state_path()));
  } catch (const ordered_json::exception& e) {
    throw RunStoreError(std::string("corrupt state.json: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != 1)
      throw RunStoreError("unsupported state.json format version");
    if (j.at("manifest_hash").get<std::string>() != hash_hex(manifest_hash(manifest_text_)))
      throw RunStoreError("manifest.json does not match the manifest this run started with");
    DriverState s;
    s.generation_completed = j.at("generation_completed").get<int>();
    s.ga_rng_state = j.at("ga_rng_state").get<std::uint64_t>();
    for (const auto& p : j.at("population")) s.population.push_back(individual_from_json(p));
    s.best_by_fitness = individual_from_json(j.at("best_by_fitness"));
    s.best_by_accuracy = individual_from_json(j.at("best_by_accuracy"));
    for (const auto& c : j.at("cache")) {
      EvaluationRecord r;
      r.canonical_key = c.at("key").get<std::string>();
      r.epochs = c.at("epochs").get<int>();
      r.accuracy = c.at("accuracy").get<double>();
      r.wall_seconds = c.at("wall_seconds").get<double>();
      r.worker_id = c.at("worker_id").get<int>();
      r.checkpoint_ref = c.at("checkpoint_ref").get<std::string>();
      s.cache_records.push_back(std::move(r));
    }
    for (const auto& c : j.at("checkpoints"))
      s.checkpoint_epochs.emplace_back(c.at("key").get<std::string>(),
                                       c.at("epochs").get<int>());
    return s;
  } catch (const ordered_json::exception& e) {
    throw RunStoreError(std::string("corrupt state.json: ") + e.what());
  }
}

std::vector<std::pair<std::string, CheckpointStore::Entry>> RunStore::load_checkpoints(
    const DriverState& state) const {
  std::vector<std::pair<std::string, CheckpointStore::Entry>> out;
  for (const auto& [key, epochs] : state.checkpoint_epochs) {
    CheckpointStore::Entry entry{epochs, nullptr};
    const std::filesystem::path path = checkpoint_file(key);
    if (std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary | std::ios::ate);
      const std::streamsize size = in.tellg();
      in.seekg(0);
      auto blob = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(size));
      in.read(reinterpret_cast<char*>(blob->data()), size);
      if (!in) throw RunStoreError("cannot read checkpoint " + path.string());
      entry.blob = std::move(blob);
    }
    out.emplace_back(key, std::move(entry));
  }
  return out;
}

void RunStore::truncate_to(int generation_completed) {
  // history: one line per generation, in order
  const std::vector<std::string> history = read_lines(history_path());
  if (static_cast<int>(history.size()) < generation_completed)
    throw RunStoreError("history.jsonl is behind state.json; run directory is corrupt");
  if (static_cast<int>(history.size()) > generation_completed) {
    std::string text;
    for (int i = 0; i < generation_completed; ++i) text += history[i] + "\n";
    write_text_file(history_path(), text);
  }

  const std::vector<std::string> events = read_lines(events_path());
  std::string text(std::string(kEventCsvHeader) + "\n");
  bool changed = false;
  for (std::size_t i = 1; i < events.size(); ++i) {
    bool keep = false;
    try {
      keep = event_from_csv(events[i]).generation <= generation_completed;
    } catch (const RunStoreError&) {
      keep = false;  // torn trailing row
    }
    if (keep)
      text += events[i] + "\n";
    else
      changed = true;
  }
  if (changed || events.empty()) write_text_file(events_path(), text);
}

std::vector<GenerationStats> RunStore::read_history() const {
  std::vector<GenerationStats> out;
  for (const std::string& line : read_lines(history_path()))
    if (!line.empty()) out.push_back(stats_from_jsonl(line));
  return out;
}

std::vector<EventRow> RunStore::read_events() const {
  std::vector<EventRow> out;
  const std::vector<std::string> lines = read_lines(events_path());
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) out.push_back(event_from_csv(lines[i]));
  return out;
}

}  // namespace evocnn
