#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "evocnn/engine.hpp"
#include "evocnn/manifest.hpp"

namespace evocnn {

struct RunStoreError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal form, locale-free. All persisted floats use it
// so identical runs produce identical bytes.
std::string format_double(double v);

std::string stats_to_jsonl(const GenerationStats& s);
GenerationStats stats_from_jsonl(const std::string& line);

inline constexpr const char* kEventCsvHeader =
    "generation,key,epochs,accuracy,wall_seconds,fitness,cache_hit,resumed_from";
std::string event_to_csv(const EventRow& row);
EventRow event_from_csv(const std::string& line);

// Layout of a run directory:
//   manifest.json            verbatim copy of the input manifest
//   history.jsonl            one GenerationStats record per generation
//   events.csv               one row per evaluation slot
//   state.json               resume snapshot, written atomically after each
//                            generation (the authority on progress)
//   checkpoints/<hash>.ckpt  model states for the cnn evaluator
class RunStore {
 public:
  // Starts a new run directory; refuses to reuse one that already has state.
  static RunStore create(const std::filesystem::path& dir, const std::string& manifest_text);
  // Opens an existing directory for resume or reporting.
  static RunStore open(const std::filesystem::path& dir);

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& manifest_text() const { return manifest_text_; }
  bool has_state() const;

  // Appends the generation's history line and event rows, persists new
  // checkpoint blobs, then atomically replaces state.json.
  void append_generation(const GenerationStats& stats, std::span<const EventRow> events,
                         const DriverState& state, const CheckpointStore& store);

  DriverState load_state() const;  // verifies the manifest hash
  std::vector<std::pair<std::string, CheckpointStore::Entry>> load_checkpoints(
      const DriverState& state) const;

  // Drops history/event rows past the snapshot (torn tails after a crash).
  void truncate_to(int generation_completed);

  std::vector<GenerationStats> read_history() const;
  std::vector<EventRow> read_events() const;

  std::filesystem::path history_path() const { return dir_ / "history.jsonl"; }
  std::filesystem::path events_path() const { return dir_ / "events.csv"; }
  std::filesystem::path state_path() const { return dir_ / "state.json"; }
  std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }

 private:
  explicit RunStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::filesystem::path checkpoint_file(const std::string& key) const;

  std::filesystem::path dir_;
  std::string manifest_text_;
  std::map<std::string, int> persisted_epochs_;  // checkpoint files already on disk
};

}  // namespace evocnn
