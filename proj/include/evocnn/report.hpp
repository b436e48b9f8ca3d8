#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "evocnn/run_store.hpp"

namespace evocnn {

// Plot-ready outputs derived purely from a run directory's persisted logs,
// so reporting is re-runnable and idempotent:
//   stats.csv    per-generation fitness/accuracy min/mean/max, depth, time
//   layers.csv   per-generation, per-depth skip/pool counts
//   speedup.csv  per-generation wall-time delta against a baseline run
//                (skipped with a warning when no baseline is given)
//   best.txt     rendered summary of the best architectures
// Returns a human-readable list of files written.
std::vector<std::string> write_report(const std::filesystem::path& run_dir,
                                      const std::optional<std::filesystem::path>& baseline_dir,
                                      std::string* warning = nullptr);

// Table-style one-row summary of a finished run (summary.csv + summary.txt):
// approach, best accuracy/fitness, generations, epoch budget, batch size,
// total evaluation time.
void write_summary(const RunStore& store, const RunManifest& manifest);

// Text rendering of one architecture from its canonical key.
std::string render_architecture(const std::string& key);

}  // namespace evocnn
