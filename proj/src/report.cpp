#include "evocnn/report.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace evocnn {

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RunStoreError("cannot write " + path.string());
  out << text;
}

struct BestRows {
  std::optional<EventRow> by_fitness;
  std::optional<EventRow> by_accuracy;
};

BestRows best_rows(const std::vector<EventRow>& events) {
  BestRows best;
  for (const EventRow& row : events) {
    if (!best.by_fitness || row.fitness > best.by_fitness->fitness) best.by_fitness = row;
    if (!best.by_accuracy || row.accuracy > best.by_accuracy->accuracy) best.by_accuracy = row;
  }
  return best;
}

}  // namespace

std::string render_architecture(const std::string& key) {
  const Genome g = parse_key(key);
  std::string out = "key: " + key + "\n";
  out += "depth: " + std::to_string(g.size()) + " (" + std::to_string(skip_count(g)) +
         " skip, " + std::to_string(pool_count(g)) + " pool)\n";
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    out += "  " + std::to_string(i) + ": ";
    if (const auto* skip = std::get_if<SkipGene>(&g.layers[i]))
      out += "skip  conv3x3 x" + std::to_string(skip->filters_1) + " -> conv3x3 x" +
             std::to_string(skip->filters_2);
    else
      out += std::get<PoolGene>(g.layers[i]).kind == PoolKind::Max ? "pool  max 2x2"
                                                                   : "pool  avg 2x2";
    out += "\n";
  }
  out += "  classifier: flatten -> linear -> softmax\n";
  return out;
}

std::vector<std::string> write_report(const std::filesystem::path& run_dir,
                                      const std::optional<std::filesystem::path>& baseline_dir,
                                      std::string* warning) {
  RunStore store = RunStore::open(run_dir);
  const std::vector<GenerationStats> history = store.read_history();
  const std::vector<EventRow> events = store.read_events();
  std::vector<std::string> written;

  std::string stats_csv =
      "generation,fitness_min,fitness_mean,fitness_max,"
      "accuracy_min,accuracy_mean,accuracy_max,mean_depth,wall_seconds\n";
  for (const GenerationStats& s : history) {
    stats_csv += std::to_string(s.generation) + ',' + format_double(s.fitness_min) + ',' +
                 format_double(s.fitness_mean) + ',' + format_double(s.fitness_max) + ',' +
                 format_double(s.accuracy_min) + ',' + format_double(s.accuracy_mean) + ',' +
                 format_double(s.accuracy_max) + ',' + format_double(s.mean_depth) + ',' +
                 format_double(s.wall_seconds) + '\n';
  }
  write_file(run_dir / "stats.csv", stats_csv);
  written.push_back("stats.csv");

  std::string layers_csv = "generation,depth,skip,pool\n";
  for (const GenerationStats& s : history)
    for (std::size_t d = 0; d < s.layer_histogram.size(); ++d)
      layers_csv += std::to_string(s.generation) + ',' + std::to_string(d) + ',' +
                    std::to_string(s.layer_histogram[d][0]) + ',' +
                    std::to_string(s.layer_histogram[d][1]) + '\n';
  write_file(run_dir / "layers.csv", layers_csv);
  written.push_back("layers.csv");

  if (baseline_dir) {
    RunStore baseline = RunStore::open(*baseline_dir);
    const std::vector<GenerationStats> base_history = baseline.read_history();
    std::map<int, double> base_wall;
    for (const GenerationStats& s : base_history) base_wall[s.generation] = s.wall_seconds;
    std::string speedup_csv = "generation,baseline_wall_seconds,wall_seconds,saved_seconds\n";
    for (const GenerationStats& s : history) {
      const auto it = base_wall.find(s.generation);
      if (it == base_wall.end()) continue;
      speedup_csv += std::to_string(s.generation) + ',' + format_double(it->second) + ',' +
                     format_double(s.wall_seconds) + ',' +
                     format_double(it->second - s.wall_seconds) + '\n';
    }
    write_file(run_dir / "speedup.csv", speedup_csv);
    written.push_back("speedup.csv");
  } else if (warning) {
    *warning = "no baseline run given; skipping speedup.csv";
  }

  const BestRows best = best_rows(events);
  std::string best_txt;
  if (best.by_fitness) {
    best_txt += "best by fitness (fitness " + format_double(best.by_fitness->fitness) +
                ", accuracy " + format_double(best.by_fitness->accuracy) + ", generation " +
                std::to_string(best.by_fitness->generation) + ")\n";
    best_txt += render_architecture(best.by_fitness->key);
    best_txt += "\nbest by accuracy (accuracy " + format_double(best.by_accuracy->accuracy) +
                ", fitness " + format_double(best.by_accuracy->fitness) + ", generation " +
                std::to_string(best.by_accuracy->generation) + ")\n";
    best_txt += render_architecture(best.by_accuracy->key);
  } else {
    best_txt = "no evaluations recorded\n";
  }
  write_file(run_dir / "best.txt", best_txt);
  written.push_back("best.txt");
  return written;
}

void write_summary(const RunStore& store, const RunManifest& manifest) {
  const std::vector<GenerationStats> history = store.read_history();
  const std::vector<EventRow> events = store.read_events();
  const BestRows best = best_rows(events);

  double total_wall = 0;
  for (const GenerationStats& s : history) total_wall += s.wall_seconds;

  const EpochSchedule& schedule = manifest.cfg.schedule;
  const std::string epochs = schedule.mode == EpochSchedule::Mode::Flat
                                 ? std::to_string(schedule.flat_epochs)
                                 : std::to_string(schedule.lo) + "->" +
                                       std::to_string(schedule.hi);

  std::string csv =
      "approach,best_accuracy,best_fitness,generations,epochs,batch_size,"
      "total_eval_wall_seconds\n";
  csv += approach_label(manifest.cfg) + ',' +
         (best.by_accuracy ? format_double(best.by_accuracy->accuracy) : "") + ',' +
         (best.by_fitness ? format_double(best.by_fitness->fitness) : "") + ',' +
         std::to_string(static_cast<int>(history.size())) + ',' + epochs + ',' +
         std::to_string(manifest.training.batch_size) + ',' + format_double(total_wall) + '\n';
  write_file(store.dir() / "summary.csv", csv);

  std::string txt = "approach:        " + approach_label(manifest.cfg) + "\n";
  txt += "generations:     " + std::to_string(static_cast<int>(history.size())) + "\n";
  txt += "epoch budget:    " + epochs + "\n";
  txt += "batch size:      " + std::to_string(manifest.training.batch_size) + "\n";
  txt += "eval wall time:  " + format_double(total_wall) + " s (" +
         format_double(total_wall / 3600.0) + " h)\n";
  if (best.by_accuracy)
    txt += "best accuracy:   " + format_double(best.by_accuracy->accuracy) + " (" +
           best.by_accuracy->key + ")\n";
  if (best.by_fitness)
    txt += "best fitness:    " + format_double(best.by_fitness->fitness) + " (" +
           best.by_fitness->key + ")\n";
  write_file(store.dir() / "summary.txt", txt);
}

}  // namespace evocnn
