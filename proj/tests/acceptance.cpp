// Acceptance suite: one checked criterion per section, one PASS/FAIL line
// each, non-zero exit when anything fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "evocnn/engine.hpp"
#include "evocnn/evaluator.hpp"
#include "evocnn/manifest.hpp"
#include "evocnn/run_store.hpp"
#include "evocnn/runner.hpp"
#include "grad_check.hpp"
#include "helpers.hpp"

using namespace evocnn;
using namespace test_helpers;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << index << ": " << name;
  if (!detail.empty()) std::cout << " (" << detail << ")";
  std::cout << "\n";
  if (!pass) ++g_failures;
}

template <typename Fn>
void criterion(int index, const std::string& name, Fn&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    report(index, name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(4);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity
// ---------------------------------------------------------------------------

double dot_loss(const Tensor4& y, const Tensor4& r) {
  double acc = 0.0;
  for (std::size_t k = 0; k < y.v.size(); ++k) acc += y.v[k] * r.v[k];
  return acc;
}

void gradient_fidelity() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  int shapes = 0;

  Rng rng(1001);
  for (int trial = 0; trial < 8; ++trial) {  // conv3x3
    const int n = 1 + static_cast<int>(rng.below(2));
    const int cin = 1 + static_cast<int>(rng.below(3));
    const int cout = 1 + static_cast<int>(rng.below(4));
    const int h = 2 + static_cast<int>(rng.below(4));
    const int w = 2 + static_cast<int>(rng.below(4));
    Tensor4 x = grad_check::random_tensor(rng, n, cin, h, w);
    Tensor4 weights = grad_check::random_tensor(rng, cout, cin, 3, 3, 0.5);
    std::vector<double> bias = grad_check::random_vector(rng, cout, 0.1);
    const Tensor4 r = grad_check::random_tensor(rng, n, cout, h, w);
    const ConvGrads grads = conv3x3_backward(x, weights, r);
    const auto loss = [&] { return dot_loss(conv3x3_forward(x, weights, bias), r); };
    worst = std::max(worst, grad_check::max_fd_error(x.v, grads.gx.v, loss));
    worst = std::max(worst, grad_check::max_fd_error(weights.v, grads.gw.v, loss));
    worst = std::max(worst, grad_check::max_fd_error(bias, grads.gb, loss));
    ++shapes;
  }

  for (int trial = 0; trial < 6; ++trial) {  // pooling, both kinds
    const PoolKind kind = trial % 2 == 0 ? PoolKind::Max : PoolKind::Average;
    const int n = 1 + static_cast<int>(rng.below(2));
    const int c = 1 + static_cast<int>(rng.below(3));
    const int h = 2 * (1 + static_cast<int>(rng.below(3)));
    const int w = 2 * (1 + static_cast<int>(rng.below(3)));
    Tensor4 x = grad_check::random_tensor(rng, n, c, h, w);
    const Tensor4 r = grad_check::random_tensor(rng, n, c, h / 2, w / 2);
    const Tensor4 gx = pool2x2_backward(x, r, kind);
    const auto loss = [&] { return dot_loss(pool2x2_forward(x, kind), r); };
    worst = std::max(worst, grad_check::max_fd_error(x.v, gx.v, loss));
    ++shapes;
  }

  for (int trial = 0; trial < 4; ++trial) {  // full skip blocks
    const int cin = 2 + static_cast<int>(rng.below(2));
    const int f1 = 3 + static_cast<int>(rng.below(3));
    const int f2 = trial % 2 == 0 ? cin : 4;  // identity and projected shortcuts
    SkipBlockParams p;
    p.conv1.w = grad_check::random_tensor(rng, f1, cin, 3, 3, 0.4);
    p.conv1.b = grad_check::random_vector(rng, f1, 0.1);
    p.conv2.w = grad_check::random_tensor(rng, f2, f1, 3, 3, 0.4);
    p.conv2.b = grad_check::random_vector(rng, f2, 0.1);
    if (f2 != cin)
      p.projection = ConvParams{grad_check::random_tensor(rng, f2, cin, 1, 1, 0.5), {}};
    Tensor4 x = grad_check::random_tensor(rng, 2, cin, 4, 4);
    SkipBlockCache cache;
    const Tensor4 r = grad_check::random_tensor(rng, 2, f2, 4, 4);
    skip_block_forward(x, p, &cache);
    const SkipBlockGrads grads = skip_block_backward(x, p, cache, r);
    const auto loss = [&] { return dot_loss(skip_block_forward(x, p), r); };
    worst = std::max(worst, grad_check::max_fd_error(x.v, grads.gx.v, loss));
    worst = std::max(worst, grad_check::max_fd_error(p.conv1.w.v, grads.gw1.v, loss));
    worst = std::max(worst, grad_check::max_fd_error(p.conv1.b, grads.gb1, loss));
    worst = std::max(worst, grad_check::max_fd_error(p.conv2.w.v, grads.gw2.v, loss));
    worst = std::max(worst, grad_check::max_fd_error(p.conv2.b, grads.gb2, loss));
    if (p.projection)
      worst = std::max(worst, grad_check::max_fd_error(p.projection->w.v, grads.gwp.v, loss));
    ++shapes;
  }

  for (int trial = 0; trial < 4; ++trial) {  // softmax cross-entropy
    const int n = 2 + static_cast<int>(rng.below(3));
    const int k = 2 + static_cast<int>(rng.below(9));
    std::vector<double> logits = grad_check::random_vector(rng, n * k, 3.0);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) labels[i] = static_cast<int>(rng.below(k));
    const auto loss = [&] {
      return cross_entropy(softmax_rows(logits, n, k), labels, k).loss;
    };
    const CrossEntropyResult ce = cross_entropy(softmax_rows(logits, n, k), labels, k);
    worst = std::max(worst, grad_check::max_fd_error(logits, ce.dlogits, loss));
    ++shapes;
  }

  const double elapsed = seconds_since(start);
  report(1, "gradient fidelity",
         worst < 1e-4 && shapes >= 20 && elapsed < 60.0,
         std::to_string(shapes) + " shapes, max rel err " + fmt(worst) + ", " +
             fmt(elapsed) + " s");
}

// ---------------------------------------------------------------------------
// 2. Operator closure
// ---------------------------------------------------------------------------

std::multiset<std::string> gene_multiset(const Genome& g) {
  std::multiset<std::string> out;
  for (const LayerGene& gene : g.layers) {
    Genome one;
    one.layers.push_back(gene);
    out.insert(canonical_key(one));
  }
  return out;
}

void operator_closure() {
  const ShapeSpec input{32, 32, 3};
  OperatorConfig cfg;
  Rng rng(2002);
  int invalid = 0, conservation_violations = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const Genome a = random_genome(rng, input, cfg.genome);
    const Genome b = random_genome(rng, input, cfg.genome);
    const auto [c1, c2] = crossover(rng, a, b, input, cfg);
    if (!genome_valid(c1, input) || !genome_valid(c2, input)) ++invalid;
    auto parents = gene_multiset(a);
    for (const std::string& k : gene_multiset(b)) parents.insert(k);
    auto children = gene_multiset(c1);
    for (const std::string& k : gene_multiset(c2)) children.insert(k);
    if (parents != children) ++conservation_violations;
  }
  for (int trial = 0; trial < 10000; ++trial) {
    const Genome g = random_genome(rng, input, cfg.genome);
    if (!genome_valid(mutate(rng, g, input, cfg), input)) ++invalid;
  }
  report(2, "operator closure", invalid == 0 && conservation_violations == 0,
         "10^4 crossovers + 10^4 mutations, " + std::to_string(invalid) +
             " invalid, " + std::to_string(conservation_violations) +
             " conservation violations");
}

// ---------------------------------------------------------------------------
// 3. Probability calibration
// ---------------------------------------------------------------------------

void probability_calibration() {
  OperatorConfig cfg;
  const ShapeSpec input{32, 32, 3};
  const Genome fixed{{SkipGene{64, 64}, SkipGene{128, 128}, PoolGene{PoolKind::Max}}};
  Rng rng(3003);
  std::map<MutationOp, int> counts;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) ++counts[mutate_ex(rng, fixed, input, cfg).applied];
  const auto freq = [&](MutationOp op) { return static_cast<double>(counts[op]) / trials; };
  const bool weights_ok = std::abs(freq(MutationOp::InsertSkip) - 0.70) <= 0.01 &&
                          std::abs(freq(MutationOp::InsertPool) - 0.10) <= 0.01 &&
                          std::abs(freq(MutationOp::Remove) - 0.10) <= 0.01 &&
                          std::abs(freq(MutationOp::Alter) - 0.10) <= 0.01;

  std::vector<Individual> three(3);
  for (int i = 0; i < 3; ++i) {
    three[i].genome = Genome{};
    three[i].key = "ind" + std::to_string(i);
    three[i].fitness = 0.1 + 0.4 * i;  // distinct
  }
  int best = 0;
  for (int t = 0; t < trials; ++t)
    best += tournament_select(rng, three).fitness == three[2].fitness ? 1 : 0;
  const double best_freq = static_cast<double>(best) / trials;
  const bool tournament_ok = std::abs(best_freq - 2.0 / 3.0) <= 0.01;

  report(3, "probability calibration", weights_ok && tournament_ok,
         "mutation (" + fmt(freq(MutationOp::InsertSkip)) + ", " +
             fmt(freq(MutationOp::InsertPool)) + ", " + fmt(freq(MutationOp::Remove)) +
             ", " + fmt(freq(MutationOp::Alter)) + "), tournament best " + fmt(best_freq));
}

// ---------------------------------------------------------------------------
// 4. Schedule exactness
// ---------------------------------------------------------------------------

void schedule_exactness() {
  EpochSchedule linear;
  linear.mode = EpochSchedule::Mode::Linear;
  linear.lo = 30;
  linear.hi = 70;
  linear.generations_total = 20;

  bool ok = epochs_for_generation(1, linear) == 30 && epochs_for_generation(20, linear) == 70;
  int previous = 0, total = 0, first_above_60 = 0;
  for (int g = 1; g <= 20; ++g) {
    const int e = epochs_for_generation(g, linear);
    if (e < previous) ok = false;
    if (e > 60 && first_above_60 == 0) first_above_60 = g;
    previous = e;
    total += e;
  }
  ok = ok && first_above_60 == 16 && total == 1000;

  EpochSchedule flat;
  flat.generations_total = 20;
  int flat_total = 0;
  for (int g = 1; g <= 20; ++g) flat_total += epochs_for_generation(g, flat);
  ok = ok && flat_total == 1200;

  report(4, "schedule exactness", ok,
         "30 at g=1, 70 at g=20, crosses 60 at g=" + std::to_string(first_above_60) +
             ", totals " + std::to_string(total) + "/" + std::to_string(flat_total));
}

// ---------------------------------------------------------------------------
// 5. Regularisation arithmetic
// ---------------------------------------------------------------------------

ExperimentConfig base_config(int pop, int generations, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.pop_size = pop;
  cfg.generations = generations;
  cfg.seed = seed;
  cfg.schedule.generations_total = generations;
  return cfg;
}

std::string selection_trace(const RunResult& result) {
  std::string trace;
  for (const EventRow& row : result.events) {
    trace += std::to_string(row.generation) + ":" + row.key + ":" +
             format_double(row.accuracy) + "\n";
  }
  return trace;
}

void regularisation_arithmetic() {
  const bool exact = regularised_fitness(0.89, 3600, 0.05) == 0.84 &&
                     regularised_fitness(0.89, 0, 0.05) == 0.89 &&
                     regularised_fitness(0.50, 72000, 0.05) == -0.50;

  // C = 0 makes wall time irrelevant: wildly different time models must
  // produce the same selection trace and fitness == accuracy throughout.
  const ExperimentConfig cfg = base_config(16, 10, 77);
  SurrogateParams fast;
  SurrogateParams slow;
  slow.kappa *= 1000.0;
  slow.overhead_seconds *= 50.0;
  SurrogateEvaluator fast_eval(fast, cfg.input, cfg.classes);
  SurrogateEvaluator slow_eval(slow, cfg.input, cfg.classes);
  const RunResult a = run_evolution(cfg, fast_eval);
  const RunResult b = run_evolution(cfg, slow_eval);
  bool fitness_is_accuracy = true;
  for (const EventRow& row : a.events)
    if (row.fitness != row.accuracy) fitness_is_accuracy = false;
  for (const EventRow& row : b.events)
    if (row.fitness != row.accuracy) fitness_is_accuracy = false;
  const bool same_trace = selection_trace(a) == selection_trace(b);

  report(5, "regularisation arithmetic", exact && fitness_is_accuracy && same_trace,
         std::string("0.89 - 0.05/h over 1 h = ") +
             format_double(regularised_fitness(0.89, 3600, 0.05)) +
             (same_trace ? ", C=0 selection trace invariant" : ", traces diverged"));
}

// ---------------------------------------------------------------------------
// 6. Checkpoint determinism
// ---------------------------------------------------------------------------

void checkpoint_determinism() {
  const ShapeSpec input{8, 8, 3};
  const Dataset desk = synthetic_dataset(SyntheticSpec{4, 8, 8, 30, 0.2}, 4242);
  GenomeConfig gcfg;
  gcfg.filter_choices = {2, 4};
  gcfg.depth_min = 1;
  gcfg.depth_max = 5;
  TrainHyper hyper;
  hyper.batch_size = 20;

  Rng rng(6006);
  int identical = 0;
  const int pairs = 10;
  for (int pair = 0; pair < pairs; ++pair) {
    const Genome g = random_genome(rng, input, gcfg);
    const int total = 2 + static_cast<int>(rng.below(3));      // 2..4 epochs
    const int split = 1 + static_cast<int>(rng.below(total - 1));

    ModelState direct = init_model(g, input, desk.classes, 99 + pair);
    train(direct, desk, total, hyper);

    ModelState head = init_model(g, input, desk.classes, 99 + pair);
    train(head, desk, split, hyper);
    ModelState tail = deserialize_model(serialize_model(head));
    train(tail, desk, total, hyper);

    if (serialize_model(direct) == serialize_model(tail)) ++identical;
  }
  report(6, "checkpoint determinism", identical == pairs,
         std::to_string(identical) + "/" + std::to_string(pairs) +
             " split trainings bit-identical");
}

// ---------------------------------------------------------------------------
// 7. Surrogate end to end
// ---------------------------------------------------------------------------

void surrogate_end_to_end() {
  const auto start = std::chrono::steady_clock::now();

  ExperimentConfig flat_cfg = base_config(20, 20, 1);
  SurrogateEvaluator flat_eval(SurrogateParams{}, flat_cfg.input, flat_cfg.classes);
  const RunResult flat = run_evolution(flat_cfg, flat_eval);

  ExperimentConfig linear_cfg = flat_cfg;
  linear_cfg.schedule.mode = EpochSchedule::Mode::Linear;
  SurrogateEvaluator linear_eval(SurrogateParams{}, linear_cfg.input, linear_cfg.classes);
  const RunResult linear = run_evolution(linear_cfg, linear_eval);

  const double elapsed = seconds_since(start);

  double flat_total = 0, linear_total = 0;
  for (const GenerationStats& s : flat.history) flat_total += s.wall_seconds;
  for (const GenerationStats& s : linear.history) linear_total += s.wall_seconds;
  const double saving = 1.0 - linear_total / flat_total;

  bool monotone = true;
  for (std::size_t i = 1; i < flat.history.size(); ++i)
    if (flat.history[i].fitness_max < flat.history[i - 1].fitness_max) monotone = false;

  report(7, "surrogate end to end",
         elapsed < 60.0 && saving >= 0.10 && saving <= 0.25 && monotone,
         "2 x (20 pop, 20 gen) in " + fmt(elapsed) + " s, partial-training saving " +
             fmt(100 * saving) + "%, flat max fitness " +
             std::string(monotone ? "non-decreasing" : "NOT monotone"));
}

// ---------------------------------------------------------------------------
// 8 + 9. Desk-scale CIFAR10 pipeline
// ---------------------------------------------------------------------------

// Real batch files are used when EVOCNN_CIFAR10_DIR points at them; otherwise
// the suite writes format-exact files generated from the synthetic patterns.
std::filesystem::path cifar_directory(const TempDir& tmp) {
  if (const char* env = std::getenv("EVOCNN_CIFAR10_DIR"); env && *env) {
    const std::filesystem::path dir(env);
    if (std::filesystem::exists(dir / "data_batch_1.bin")) return dir;
  }
  const std::filesystem::path dir = tmp.path() / "cifar10";
  std::filesystem::create_directories(dir);
  const Dataset source = synthetic_dataset(SyntheticSpec{10, 32, 32, 192, 0.9}, 31415);
  std::size_t cursor = 0;
  const auto to_batch = [&](int records) {
    Cifar10Batch batch;
    batch.labels.reserve(records);
    batch.pixels.reserve(static_cast<std::size_t>(records) * 3072);
    for (int i = 0; i < records; ++i, ++cursor) {
      batch.labels.push_back(static_cast<std::uint8_t>(source.labels[cursor]));
      const double* px = source.images.v.data() + cursor * 3072;
      for (int k = 0; k < 3072; ++k) {
        const double v = 128.0 + 70.0 * px[k];
        batch.pixels.push_back(
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
      }
    }
    return batch;
  };
  for (int i = 1; i <= 5; ++i)
    write_cifar10_batch(dir / ("data_batch_" + std::to_string(i) + ".bin"), to_batch(320));
  write_cifar10_batch(dir / "test_batch.bin", to_batch(320));
  return dir;
}

void desk_scale_learning(const std::filesystem::path& cifar_dir) {
  const auto start = std::chrono::steady_clock::now();
  const Cifar10Data cifar = load_cifar10(cifar_dir);
  const auto [train_set, val_set] = desk_split(cifar.train, 100, 50, 16, 7);

  const Genome g{{SkipGene{8, 8}, PoolGene{PoolKind::Max}, SkipGene{16, 16},
                  PoolGene{PoolKind::Average}}};
  TrainHyper hyper;        // batch 50, momentum .9, decay .9 after 1, 26, 43
  hyper.lr.initial = 0.02; // the full-scale 0.1 overdrives this miniature net

  ModelState model = init_model(g, ShapeSpec{16, 16, 3}, 10, 2024);
  train(model, train_set, 10, hyper);
  const double accuracy = test_accuracy(model, val_set);

  ModelState again = init_model(g, ShapeSpec{16, 16, 3}, 10, 2024);
  train(again, train_set, 10, hyper);
  const bool deterministic = serialize_model(model) == serialize_model(again) &&
                             test_accuracy(again, val_set) == accuracy;

  const double elapsed = seconds_since(start);
  report(8, "desk-scale learning",
         accuracy > 0.15 && deterministic && elapsed < 600.0,
         "2-skip/2-pool genome, 1000 train images, 10 epochs: validation accuracy " +
             fmt(accuracy) + ", bit-deterministic, " + fmt(elapsed) + " s");
}

void cifar_reader(const std::filesystem::path& cifar_dir, const TempDir& tmp) {
  const std::filesystem::path batch_file = cifar_dir / "data_batch_1.bin";
  const std::string original = read_file(batch_file);
  const Cifar10Batch parsed = read_cifar10_batch(batch_file);
  const std::vector<std::uint8_t> bytes = serialize_cifar10_records(parsed);
  const bool round_trip =
      bytes.size() == original.size() &&
      std::equal(bytes.begin(), bytes.end(),
                 reinterpret_cast<const std::uint8_t*>(original.data()));

  bool rejects_truncated = false, rejects_label = false, rejects_missing = false;
  const auto truncated_path = tmp.path() / "truncated.bin";
  write_file(truncated_path, original.substr(0, 3073 * 2 + 5));
  try {
    read_cifar10_batch(truncated_path);
  } catch (const DataFormatError&) {
    rejects_truncated = true;
  }
  std::string bad = original.substr(0, 3073 * 2);
  bad[0] = static_cast<char>(255);
  const auto bad_path = tmp.path() / "badlabel.bin";
  write_file(bad_path, bad);
  try {
    read_cifar10_batch(bad_path);
  } catch (const DataFormatError&) {
    rejects_label = true;
  }
  try {
    load_cifar10(tmp.path() / "missing");
  } catch (const DataFormatError&) {
    rejects_missing = true;
  }

  report(9, "cifar10 reader", round_trip && rejects_truncated && rejects_label && rejects_missing,
         std::to_string(parsed.size()) + " records round-trip byte-exact, malformed files rejected");
}

// ---------------------------------------------------------------------------
// 10. Resume robustness
// ---------------------------------------------------------------------------

void resume_robustness() {
  const std::string bin = evocnn_binary();
  TempDir tmp;
  const std::string manifest = R"({
  "pop_size": 12,
  "generations": 10,
  "seed": 5,
  "fitness": {"time_penalty_per_hour": 0.05},
  "schedule": {"mode": "linear", "lo": 30, "hi": 70},
  "evaluator": {"kind": "surrogate"},
  "dataset": {"kind": "shape", "height": 32, "width": 32, "channels": 3, "classes": 10}
}
)";
  const auto manifest_path = tmp.path() / "manifest.json";
  write_file(manifest_path, manifest);

  const auto full_dir = tmp.path() / "full";
  const CommandResult full = run_command(bin + " run " + manifest_path.string() +
                                         " --output-dir " + full_dir.string());

  const auto part_dir = tmp.path() / "part";
  const CommandResult part = run_command(bin + " run " + manifest_path.string() +
                                         " --output-dir " + part_dir.string() +
                                         " --stop-after 4");
  // simulate the torn tail of a mid-write kill
  write_file(part_dir / "history.jsonl",
             read_file(part_dir / "history.jsonl") + "{\"generation\":5,\"fitn");
  write_file(part_dir / "events.csv", read_file(part_dir / "events.csv") + "5,S64.64");
  const CommandResult resumed = run_command(bin + " resume " + part_dir.string());

  const bool histories_identical =
      read_file(full_dir / "history.jsonl") == read_file(part_dir / "history.jsonl");
  const bool events_identical =
      read_file(full_dir / "events.csv") == read_file(part_dir / "events.csv");

  report(10, "resume robustness",
         full.exit_code == 0 && part.exit_code == 0 && resumed.exit_code == 0 &&
             histories_identical && events_identical,
         std::string("killed after generation 4 with a torn write; history ") +
             (histories_identical ? "byte-identical" : "DIFFERS"));
}

}  // namespace

int main() {
  criterion(1, "gradient fidelity", gradient_fidelity);
  criterion(2, "operator closure", operator_closure);
  criterion(3, "probability calibration", probability_calibration);
  criterion(4, "schedule exactness", schedule_exactness);
  criterion(5, "regularisation arithmetic", regularisation_arithmetic);
  criterion(6, "checkpoint determinism", checkpoint_determinism);
  criterion(7, "surrogate end to end", surrogate_end_to_end);
  {
    TempDir tmp;
    const std::filesystem::path cifar_dir = cifar_directory(tmp);
    criterion(8, "desk-scale learning", [&] { desk_scale_learning(cifar_dir); });
    criterion(9, "cifar10 reader", [&] { cifar_reader(cifar_dir, tmp); });
  }
  criterion(10, "resume robustness", resume_robustness);

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all acceptance criteria passed\n";
  return 0;
}
