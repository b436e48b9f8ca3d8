// evocnn command line: run experiments from a manifest, resume interrupted
// runs, and emit plot-ready report data.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "evocnn/report.hpp"
#include "evocnn/runner.hpp"

namespace {

void print_usage(std::ostream& out) {
  out << "Usage:\n"
      << "  evocnn run <manifest.json> [--output-dir DIR] [--stop-after N]\n"
      << "  evocnn resume <run-dir> [--stop-after N]\n"
      << "  evocnn report <run-dir> [--baseline <run-dir>]\n"
      << "\n"
      << "The EVOCNN_WORKERS environment variable overrides the manifest's\n"
      << "worker count.\n";
}

int worker_override() {
  const char* env = std::getenv("EVOCNN_WORKERS");
  if (!env || !*env) return 0;
  const int workers = std::atoi(env);
  if (workers < 1) {
    std::cerr << "warning: ignoring EVOCNN_WORKERS='" << env << "'\n";
    return 0;
  }
  return workers;
}

int cmd_run(int argc, char** argv) {
  if (argc < 1) {
    print_usage(std::cerr);
    return 1;
  }
  const std::string manifest_path = argv[0];
  std::string output_dir;
  int stop_after = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--output-dir" && i + 1 < argc) {
      output_dir = argv[++i];
    } else if (arg == "--stop-after" && i + 1 < argc) {
      stop_after = std::atoi(argv[++i]);
    } else {
      std::cerr << "unknown option for run: " << arg << "\n";
      return 1;
    }
  }

  evocnn::LoadedManifest loaded = evocnn::load_manifest_file(manifest_path);
  if (const int workers = worker_override()) loaded.manifest.cfg.workers = workers;
  if (output_dir.empty()) output_dir = loaded.manifest.output_dir;
  if (output_dir.empty()) {
    std::cerr << "error: no output directory (set output_dir in the manifest "
                 "or pass --output-dir)\n";
    return 2;
  }

  evocnn::RunStore store = evocnn::RunStore::create(output_dir, loaded.raw_text);
  evocnn::execute_run(loaded, store, stop_after, std::cout);
  return 0;
}

int cmd_resume(int argc, char** argv) {
  if (argc < 1) {
    print_usage(std::cerr);
    return 1;
  }
  int stop_after = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--stop-after" && i + 1 < argc) {
      stop_after = std::atoi(argv[++i]);
    } else {
      std::cerr << "unknown option for resume: " << arg << "\n";
      return 1;
    }
  }
  evocnn::RunStore store = evocnn::RunStore::open(argv[0]);
  evocnn::execute_resume(store, stop_after, std::cout, worker_override());
  return 0;
}

int cmd_report(int argc, char** argv) {
  if (argc < 1) {
    print_usage(std::cerr);
    return 1;
  }
  std::optional<std::filesystem::path> baseline;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--baseline" && i + 1 < argc) {
      baseline = argv[++i];
    } else {
      std::cerr << "unknown option for report: " << arg << "\n";
      return 1;
    }
  }
  std::string warning;
  const std::vector<std::string> written =
      evocnn::write_report(argv[0], baseline, &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
  for (const std::string& file : written) std::cout << "wrote " << file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    print_usage(std::cerr);
    return 1;
  }
  const std::string command = argv[1];
  try {
    if (command == "run") return cmd_run(argc - 2, argv + 2);
    if (command == "resume") return cmd_resume(argc - 2, argv + 2);
    if (command == "report") return cmd_report(argc - 2, argv + 2);
    if (command == "--help" || command == "-h" || command == "help") {
      print_usage(std::cout);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << "unknown command: " << command << "\n";
  print_usage(std::cerr);
  return 1;
}
