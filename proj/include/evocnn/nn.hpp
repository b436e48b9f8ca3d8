#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evocnn/genome.hpp"
#include "evocnn/rng.hpp"
#include "evocnn/tensor.hpp"

namespace evocnn {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; carries the 1-based epoch index.
struct Diverged : std::runtime_error {
  int epoch;
  explicit Diverged(int epoch_)
      : std::runtime_error("training diverged in epoch " + std::to_string(epoch_)),
        epoch(epoch_) {}
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Kernels. Convolution is cross-correlation with same padding.
// ---------------------------------------------------------------------------

// x: (N, C_in, H, W), w: (C_out, C_in, 3, 3), bias: C_out. Output keeps H x W.
Tensor4 conv3x3_forward(const Tensor4& x, const Tensor4& w, std::span<const double> bias);

struct ConvGrads {
  Tensor4 gx;
  Tensor4 gw;
  std::vector<double> gb;
};

ConvGrads conv3x3_backward(const Tensor4& x, const Tensor4& w, const Tensor4& gy);

// 1x1 convolution used by the shortcut projection (no bias).
Tensor4 conv1x1_forward(const Tensor4& x, const Tensor4& w);
ConvGrads conv1x1_backward(const Tensor4& x, const Tensor4& w, const Tensor4& gy);

// 2x2 window, stride 2. Odd trailing rows/columns are dropped, matching the
// floor semantics of genome shape inference. Max backward routes the gradient
// to the first-found argmax; average backward spreads 1/4 per window cell.
Tensor4 pool2x2_forward(const Tensor4& x, PoolKind kind);
Tensor4 pool2x2_backward(const Tensor4& x, const Tensor4& gy, PoolKind kind);

Tensor4 relu(const Tensor4& x);
// gx from upstream gy given the forward *input* x.
Tensor4 relu_backward(const Tensor4& x, const Tensor4& gy);

struct ConvParams {
  Tensor4 w;
  std::vector<double> b;  // empty for the bias-free shortcut projection
};

struct SkipBlockParams {
  ConvParams conv1;
  ConvParams conv2;
  std::optional<ConvParams> projection;  // 1x1, present when C_in != filters_2
};

struct SkipBlockCache {
  Tensor4 a1_pre;    // conv1 output
  Tensor4 a1;        // relu(a1_pre)
  Tensor4 sum_pre;   // conv2 output + shortcut, before the final relu
};

// conv -> relu -> conv, plus the (possibly projected) shortcut, then relu.
Tensor4 skip_block_forward(const Tensor4& x, const SkipBlockParams& p,
                           SkipBlockCache* cache = nullptr);

struct SkipBlockGrads {
  Tensor4 gx;
  Tensor4 gw1;
  std::vector<double> gb1;
  Tensor4 gw2;
  std::vector<double> gb2;
  Tensor4 gwp;  // empty tensor when there is no projection
};

SkipBlockGrads skip_block_backward(const Tensor4& x, const SkipBlockParams& p,
                                   const SkipBlockCache& cache, const Tensor4& gy);

// Row-wise softmax of logits (N x K), numerically stabilised.
std::vector<double> softmax_rows(std::span<const double> logits, int rows, int cols);

// Mean cross-entropy of softmax probabilities against integer labels, plus
// the gradient w.r.t. logits ((p - onehot) / N).
struct CrossEntropyResult {
  double loss = 0.0;
  std::vector<double> dlogits;
};
CrossEntropyResult cross_entropy(std::span<const double> probabilities,
                                 std::span<const int> labels, int classes);

// ---------------------------------------------------------------------------
// Model state and training
// ---------------------------------------------------------------------------

struct LinearParams {
  int in = 0, out = 0;
  std::vector<double> w;  // row-major (out x in)
  std::vector<double> b;
};

struct LrSchedule {
  double initial = 0.1;
  double decay_factor = 0.9;
  std::vector<int> decay_after_epochs{1, 26, 43};
};

// Learning rate during a 1-based epoch: the rate decays once for every decay
// point already completed, so "after epoch k" means epochs k+1 onward.
double lr_for_epoch(int epoch, const LrSchedule& s);

struct TrainHyper {
  int batch_size = 50;
  double momentum = 0.9;
  LrSchedule lr;
};

// Weights, momentum buffers and the training cursor for one genome.
// Parameter declaration order (used by SGD, checkpoints, enumeration):
// per skip gene: conv1.w, conv1.b, conv2.w, conv2.b[, projection.w];
// then classifier.w, classifier.b.
struct ModelState {
  Genome genome;
  ShapeSpec input;
  int classes = 0;
  std::vector<SkipBlockParams> blocks;       // one per skip gene, genome order
  LinearParams classifier;
  std::vector<std::vector<double>> momentum; // one buffer per parameter array
  std::int64_t epochs_completed = 0;
  std::uint64_t rng_cursor = 0;  // per-epoch shuffle stream; advances each epoch
};

// He-style fan-in scaled uniform init, fully determined by (genome, seed).
ModelState init_model(const Genome& g, ShapeSpec input, int classes, std::uint64_t seed);

// Visits parameter arrays in declaration order, paired with momentum buffers.
void for_each_param(ModelState& m,
                    const std::function<void(std::vector<double>&, std::vector<double>&)>& fn);
std::size_t param_array_count(const ModelState& m);

struct Gradients {
  std::vector<std::vector<double>> g;  // aligned with for_each_param order
};

// Mean loss over the batch; fills grads (resized to match the model).
double model_forward_backward(const ModelState& m, const Tensor4& batch,
                              std::span<const int> labels, Gradients& grads);

// Forward only; returns class probabilities (N x classes).
std::vector<double> model_predict(const ModelState& m, const Tensor4& batch);

// v <- momentum * v + g ; w <- w - lr * v
void sgd_momentum_step(ModelState& m, const Gradients& grads, double lr, double momentum);

struct TrainMetrics {
  std::vector<double> epoch_losses;  // mean loss per trained epoch
};

struct Dataset;  // data.hpp

// Mini-batch SGD from m.epochs_completed + 1 up to epochs_target. Each epoch
// shuffles from the model's rng cursor, so resumed training is bit-identical
// to uninterrupted training. Throws Diverged on non-finite loss and
// std::invalid_argument when epochs_target <= epochs_completed.
TrainMetrics train(ModelState& m, const Dataset& data, int epochs_target,
                   const TrainHyper& hyper);

// Argmax-prediction accuracy; ties resolve to the lowest class index.
double test_accuracy(const ModelState& m, const Dataset& data);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary, 64-bit little-endian arrays.
// Header: magic "EVCK", u32 version, canonical genome key, epochs_completed,
// rng cursor, input shape and class count; then per parameter array in
// declaration order: dims, values, momentum.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_model(const ModelState& m);
ModelState deserialize_model(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const ModelState& m);
ModelState load_checkpoint(const std::string& path);

}  // namespace evocnn
