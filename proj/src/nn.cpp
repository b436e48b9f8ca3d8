#include "evocnn/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "evocnn/data.hpp"

namespace evocnn {

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

Tensor4 conv3x3_forward(const Tensor4& x, const Tensor4& w, std::span<const double> bias) {
  if (w.c != x.c || w.h != 3 || w.w != 3)
    throw ShapeError("conv3x3: weight shape does not match input");
  if (!bias.empty() && static_cast<int>(bias.size()) != w.n)
    throw ShapeError("conv3x3: bias size does not match output channels");
  const int H = x.h, W = x.w;
  Tensor4 y(x.n, w.n, H, W);
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < w.n; ++o) {
      double* yp = &y.at(i, o, 0, 0);
      if (!bias.empty()) std::fill(yp, yp + static_cast<std::size_t>(H) * W, bias[o]);
      for (int ci = 0; ci < x.c; ++ci) {
        const double* xp = &x.at(i, ci, 0, 0);
        for (int ky = 0; ky < 3; ++ky) {
          const int dy = ky - 1;
          const int ylo = std::max(0, -dy), yhi = std::min(H, H - dy);
          for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            const double wv = w.at(o, ci, ky, kx);
            const int xlo = std::max(0, -dx), xhi = std::min(W, W - dx);
            for (int oy = ylo; oy < yhi; ++oy) {
              const double* xrow = xp + static_cast<std::size_t>(oy + dy) * W + dx;
              double* yrow = yp + static_cast<std::size_t>(oy) * W;
              for (int ox = xlo; ox < xhi; ++ox) yrow[ox] += wv * xrow[ox];
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv3x3_backward(const Tensor4& x, const Tensor4& w, const Tensor4& gy) {
  if (gy.n != x.n || gy.c != w.n || gy.h != x.h || gy.w != x.w)
    throw ShapeError("conv3x3 backward: gradient shape mismatch");
  const int H = x.h, W = x.w;
  ConvGrads g;
  g.gx = Tensor4(x.n, x.c, H, W);
  g.gw = Tensor4(w.n, w.c, 3, 3);
  g.gb.assign(w.n, 0.0);
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < w.n; ++o) {
      const double* gyp = &gy.at(i, o, 0, 0);
      double acc_b = 0.0;
      for (std::size_t k = 0; k < static_cast<std::size_t>(H) * W; ++k) acc_b += gyp[k];
      g.gb[o] += acc_b;
      for (int ci = 0; ci < x.c; ++ci) {
        const double* xp = &x.at(i, ci, 0, 0);
        double* gxp = &g.gx.at(i, ci, 0, 0);
        for (int ky = 0; ky < 3; ++ky) {
          const int dy = ky - 1;
          const int ylo = std::max(0, -dy), yhi = std::min(H, H - dy);
          for (int kx = 0; kx < 3; ++kx) {
            const int dx = kx - 1;
            const double wv = w.at(o, ci, ky, kx);
            const int xlo = std::max(0, -dx), xhi = std::min(W, W - dx);
            double acc_w = 0.0;
            for (int oy = ylo; oy < yhi; ++oy) {
              const double* xrow = xp + static_cast<std::size_t>(oy + dy) * W + dx;
              double* gxrow = gxp + static_cast<std::size_t>(oy + dy) * W + dx;
              const double* gyrow = gyp + static_cast<std::size_t>(oy) * W;
              for (int ox = xlo; ox < xhi; ++ox) {
                acc_w += gyrow[ox] * xrow[ox];
                gxrow[ox] += wv * gyrow[ox];
              }
            }
            g.gw.at(o, ci, ky, kx) += acc_w;
          }
        }
      }
    }
  }
  return g;
}

Tensor4 conv1x1_forward(const Tensor4& x, const Tensor4& w) {
  if (w.c != x.c || w.h != 1 || w.w != 1)
    throw ShapeError("conv1x1: weight shape does not match input");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  Tensor4 y(x.n, w.n, x.h, x.w);
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < w.n; ++o) {
      double* yp = &y.at(i, o, 0, 0);
      for (int ci = 0; ci < x.c; ++ci) {
        const double wv = w.at(o, ci, 0, 0);
        const double* xp = &x.at(i, ci, 0, 0);
        for (std::size_t k = 0; k < plane; ++k) yp[k] += wv * xp[k];
      }
    }
  }
  return y;
}

ConvGrads conv1x1_backward(const Tensor4& x, const Tensor4& w, const Tensor4& gy) {
  if (gy.n != x.n || gy.c != w.n || gy.h != x.h || gy.w != x.w)
    throw ShapeError("conv1x1 backward: gradient shape mismatch");
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  ConvGrads g;
  g.gx = Tensor4(x.n, x.c, x.h, x.w);
  g.gw = Tensor4(w.n, w.c, 1, 1);
  for (int i = 0; i < x.n; ++i) {
    for (int o = 0; o < w.n; ++o) {
      const double* gyp = &gy.at(i, o, 0, 0);
      for (int ci = 0; ci < x.c; ++ci) {
        const double wv = w.at(o, ci, 0, 0);
        const double* xp = &x.at(i, ci, 0, 0);
        double* gxp = &g.gx.at(i, ci, 0, 0);
        double acc = 0.0;
        for (std::size_t k = 0; k < plane; ++k) {
          acc += gyp[k] * xp[k];
          gxp[k] += wv * gyp[k];
        }
        g.gw.at(o, ci, 0, 0) += acc;
      }
    }
  }
  return g;
}

Tensor4 pool2x2_forward(const Tensor4& x, PoolKind kind) {
  const int oh = x.h / 2, ow = x.w / 2;
  if (oh < 1 || ow < 1) throw ShapeError("pool2x2: input too small");
  Tensor4 y(x.n, x.c, oh, ow);
  for (int i = 0; i < x.n; ++i)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double a = x.at(i, ci, 2 * oy, 2 * ox);
          const double b = x.at(i, ci, 2 * oy, 2 * ox + 1);
          const double c = x.at(i, ci, 2 * oy + 1, 2 * ox);
          const double d = x.at(i, ci, 2 * oy + 1, 2 * ox + 1);
          y.at(i, ci, oy, ox) = kind == PoolKind::Max
                                    ? std::max(std::max(a, b), std::max(c, d))
                                    : (a + b + c + d) * 0.25;
        }
  return y;
}

Tensor4 pool2x2_backward(const Tensor4& x, const Tensor4& gy, PoolKind kind) {
  const int oh = x.h / 2, ow = x.w / 2;
  if (gy.n != x.n || gy.c != x.c || gy.h != oh || gy.w != ow)
    throw ShapeError("pool2x2 backward: gradient shape mismatch");
  Tensor4 gx(x.n, x.c, x.h, x.w);
  for (int i = 0; i < x.n; ++i)
    for (int ci = 0; ci < x.c; ++ci)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const double g = gy.at(i, ci, oy, ox);
          if (kind == PoolKind::Average) {
            const double q = g * 0.25;
            gx.at(i, ci, 2 * oy, 2 * ox) += q;
            gx.at(i, ci, 2 * oy, 2 * ox + 1) += q;
            gx.at(i, ci, 2 * oy + 1, 2 * ox) += q;
            gx.at(i, ci, 2 * oy + 1, 2 * ox + 1) += q;
          } else {
            int by = 2 * oy, bx = 2 * ox;
            double best = x.at(i, ci, by, bx);
            for (int t = 1; t < 4; ++t) {  // first-found argmax wins ties
              const int cy = 2 * oy + t / 2, cx = 2 * ox + t % 2;
              if (x.at(i, ci, cy, cx) > best) {
                best = x.at(i, ci, cy, cx);
                by = cy;
                bx = cx;
              }
            }
            gx.at(i, ci, by, bx) += g;
          }
        }
  return gx;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 y = x;
  for (double& v : y.v) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& gy) {
  if (!x.same_shape(gy)) throw ShapeError("relu backward: shape mismatch");
  Tensor4 gx = gy;
  for (std::size_t k = 0; k < gx.v.size(); ++k)
    if (x.v[k] <= 0.0) gx.v[k] = 0.0;
  return gx;
}

std::vector<double> softmax_rows(std::span<const double> logits, int rows, int cols) {
  std::vector<double> p(logits.begin(), logits.end());
  for (int i = 0; i < rows; ++i) {
    double* row = p.data() + static_cast<std::size_t>(i) * cols;
    const double m = *std::max_element(row, row + cols);
    double sum = 0.0;
    for (int k = 0; k < cols; ++k) {
      row[k] = std::exp(row[k] - m);
      sum += row[k];
    }
    for (int k = 0; k < cols; ++k) row[k] /= sum;
  }
  return p;
}

CrossEntropyResult cross_entropy(std::span<const double> probabilities,
                                 std::span<const int> labels, int classes) {
  const int n = static_cast<int>(labels.size());
  CrossEntropyResult r;
  r.dlogits.assign(probabilities.begin(), probabilities.end());
  double loss = 0.0;
  const double inv_n = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    double* row = r.dlogits.data() + static_cast<std::size_t>(i) * classes;
    loss -= std::log(row[labels[i]]);
    for (int k = 0; k < classes; ++k) row[k] *= inv_n;
    row[labels[i]] -= inv_n;
  }
  r.loss = loss * inv_n;
  return r;
}

Tensor4 skip_block_forward(const Tensor4& x, const SkipBlockParams& p,
                           SkipBlockCache* cache) {
  Tensor4 a1_pre = conv3x3_forward(x, p.conv1.w, p.conv1.b);
  Tensor4 a1 = relu(a1_pre);
  Tensor4 sum = conv3x3_forward(a1, p.conv2.w, p.conv2.b);
  if (p.projection) {
    const Tensor4 shortcut = conv1x1_forward(x, p.projection->w);
    for (std::size_t k = 0; k < sum.v.size(); ++k) sum.v[k] += shortcut.v[k];
  } else {
    if (x.c != sum.c) throw ShapeError("skip block: identity shortcut needs matching channels");
    for (std::size_t k = 0; k < sum.v.size(); ++k) sum.v[k] += x.v[k];
  }
  Tensor4 y = relu(sum);
  if (cache) {
    cache->a1_pre = std::move(a1_pre);
    cache->a1 = std::move(a1);
    cache->sum_pre = std::move(sum);
  }
  return y;
}

SkipBlockGrads skip_block_backward(const Tensor4& x, const SkipBlockParams& p,
                                   const SkipBlockCache& cache, const Tensor4& gy) {
  SkipBlockGrads out;
  const Tensor4 gsum = relu_backward(cache.sum_pre, gy);
  ConvGrads g2 = conv3x3_backward(cache.a1, p.conv2.w, gsum);
  out.gw2 = std::move(g2.gw);
  out.gb2 = std::move(g2.gb);
  const Tensor4 ga1_pre = relu_backward(cache.a1_pre, g2.gx);
  ConvGrads g1 = conv3x3_backward(x, p.conv1.w, ga1_pre);
  out.gw1 = std::move(g1.gw);
  out.gb1 = std::move(g1.gb);
  out.gx = std::move(g1.gx);
  if (p.projection) {
    ConvGrads gp = conv1x1_backward(x, p.projection->w, gsum);
    out.gwp = std::move(gp.gw);
    for (std::size_t k = 0; k < out.gx.v.size(); ++k) out.gx.v[k] += gp.gx.v[k];
  } else {
    for (std::size_t k = 0; k < out.gx.v.size(); ++k) out.gx.v[k] += gsum.v[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model state
// ---------------------------------------------------------------------------

double lr_for_epoch(int epoch, const LrSchedule& s) {
  double lr = s.initial;
  for (int point : s.decay_after_epochs)
    if (point < epoch) lr *= s.decay_factor;
  return lr;
}

namespace {

// Zero-filled parameter structure with shapes derived from the genome.
ModelState make_skeleton(const Genome& g, ShapeSpec input, int classes) {
  ModelState m;
  m.genome = g;
  m.input = input;
  m.classes = classes;
  ShapeSpec s = input;
  for (const LayerGene& gene : g.layers) {
    if (const auto* skip = std::get_if<SkipGene>(&gene)) {
      SkipBlockParams p;
      p.conv1.w = Tensor4(skip->filters_1, s.channels, 3, 3);
      p.conv1.b.assign(skip->filters_1, 0.0);
      p.conv2.w = Tensor4(skip->filters_2, skip->filters_1, 3, 3);
      p.conv2.b.assign(skip->filters_2, 0.0);
      if (s.channels != skip->filters_2) {
        ConvParams proj;
        proj.w = Tensor4(skip->filters_2, s.channels, 1, 1);
        p.projection = std::move(proj);
      }
      m.blocks.push_back(std::move(p));
      s.channels = skip->filters_2;
    } else {
      s.height /= 2;
      s.width /= 2;
      if (s.height < 1 || s.width < 1)
        throw InvalidGenome("pool layer reduces resolution below one pixel");
    }
  }
  m.classifier.in = s.height * s.width * s.channels;
  m.classifier.out = classes;
  m.classifier.w.assign(static_cast<std::size_t>(m.classifier.in) * classes, 0.0);
  m.classifier.b.assign(classes, 0.0);
  for (const SkipBlockParams& b : m.blocks) {
    m.momentum.emplace_back(b.conv1.w.v.size(), 0.0);
    m.momentum.emplace_back(b.conv1.b.size(), 0.0);
    m.momentum.emplace_back(b.conv2.w.v.size(), 0.0);
    m.momentum.emplace_back(b.conv2.b.size(), 0.0);
    if (b.projection) m.momentum.emplace_back(b.projection->w.v.size(), 0.0);
  }
  m.momentum.emplace_back(m.classifier.w.size(), 0.0);
  m.momentum.emplace_back(m.classifier.b.size(), 0.0);
  return m;
}

void he_uniform_fill(Rng& rng, std::vector<double>& w, std::size_t fan_in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : w) v = (2.0 * rng.real() - 1.0) * limit;
}

}  // namespace

void for_each_param(ModelState& m,
                    const std::function<void(std::vector<double>&, std::vector<double>&)>& fn) {
  std::size_t idx = 0;
  for (SkipBlockParams& b : m.blocks) {
    fn(b.conv1.w.v, m.momentum[idx]); ++idx;
    fn(b.conv1.b, m.momentum[idx]); ++idx;
    fn(b.conv2.w.v, m.momentum[idx]); ++idx;
    fn(b.conv2.b, m.momentum[idx]); ++idx;
    if (b.projection) { fn(b.projection->w.v, m.momentum[idx]); ++idx; }
  }
  fn(m.classifier.w, m.momentum[idx]); ++idx;
  fn(m.classifier.b, m.momentum[idx]);
}

std::size_t param_array_count(const ModelState& m) {
  std::size_t count = 2;  // classifier
  for (const SkipBlockParams& b : m.blocks) count += b.projection ? 5 : 4;
  return count;
}

ModelState init_model(const Genome& g, ShapeSpec input, int classes, std::uint64_t seed) {
  ModelState m = make_skeleton(g, input, classes);
  const std::uint64_t key_hash = fnv1a64(canonical_key(g));
  Rng rng(derive_seed(seed, stream::kModelParams, key_hash));
  for (SkipBlockParams& b : m.blocks) {
    he_uniform_fill(rng, b.conv1.w.v, static_cast<std::size_t>(b.conv1.w.c) * 9);
    he_uniform_fill(rng, b.conv2.w.v, static_cast<std::size_t>(b.conv2.w.c) * 9);
    if (b.projection)
      he_uniform_fill(rng, b.projection->w.v, static_cast<std::size_t>(b.projection->w.c));
  }
  he_uniform_fill(rng, m.classifier.w, m.classifier.in);
  m.rng_cursor = derive_seed(seed, stream::kShuffleCursor, key_hash);
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward over a whole genome
// ---------------------------------------------------------------------------

namespace {

struct LayerTrace {
  Tensor4 input;
  SkipBlockCache skip;  // filled for skip genes only
};

struct ClassifierOut {
  std::vector<double> probs;
  Tensor4 features;  // layout the classifier consumed, for backward
};

std::vector<double> classifier_logits(const LinearParams& c, const Tensor4& feat) {
  const int n = feat.n;
  const std::size_t f_count = feat.size() / n;
  if (static_cast<int>(f_count) != c.in)
    throw ShapeError("classifier: feature count mismatch");
  std::vector<double> logits(static_cast<std::size_t>(n) * c.out);
  for (int i = 0; i < n; ++i) {
    const double* fp = feat.v.data() + static_cast<std::size_t>(i) * c.in;
    double* lp = logits.data() + static_cast<std::size_t>(i) * c.out;
    for (int k = 0; k < c.out; ++k) {
      const double* wrow = c.w.data() + static_cast<std::size_t>(k) * c.in;
      double acc = c.b[k];
      for (int f = 0; f < c.in; ++f) acc += wrow[f] * fp[f];
      lp[k] = acc;
    }
  }
  return logits;
}

}  // namespace

double model_forward_backward(const ModelState& m, const Tensor4& batch,
                              std::span<const int> labels, Gradients& grads) {
  std::vector<LayerTrace> traces(m.genome.size());
  Tensor4 cur = batch;
  std::size_t block_idx = 0;
  for (std::size_t li = 0; li < m.genome.layers.size(); ++li) {
    traces[li].input = std::move(cur);
    const LayerGene& gene = m.genome.layers[li];
    if (is_skip(gene)) {
      cur = skip_block_forward(traces[li].input, m.blocks[block_idx], &traces[li].skip);
      ++block_idx;
    } else {
      cur = pool2x2_forward(traces[li].input, std::get<PoolGene>(gene).kind);
    }
  }

  const int n = batch.n;
  const std::vector<double> logits = classifier_logits(m.classifier, cur);
  const std::vector<double> probs = softmax_rows(logits, n, m.classes);
  CrossEntropyResult ce = cross_entropy(probs, labels, m.classes);

  grads.g.assign(param_array_count(m), {});
  std::size_t slot = 0;
  std::vector<std::size_t> block_slot(m.blocks.size());
  for (std::size_t bi = 0; bi < m.blocks.size(); ++bi) {
    block_slot[bi] = slot;
    slot += m.blocks[bi].projection ? 5 : 4;
  }
  const std::size_t cls_slot = slot;

  // classifier backward
  std::vector<double>& gw = grads.g[cls_slot];
  std::vector<double>& gb = grads.g[cls_slot + 1];
  gw.assign(m.classifier.w.size(), 0.0);
  gb.assign(m.classifier.b.size(), 0.0);
  Tensor4 gfeat(cur.n, cur.c, cur.h, cur.w);
  for (int i = 0; i < n; ++i) {
    const double* fp = cur.v.data() + static_cast<std::size_t>(i) * m.classifier.in;
    double* gfp = gfeat.v.data() + static_cast<std::size_t>(i) * m.classifier.in;
    const double* dl = ce.dlogits.data() + static_cast<std::size_t>(i) * m.classes;
    for (int k = 0; k < m.classes; ++k) {
      const double d = dl[k];
      gb[k] += d;
      double* gwrow = gw.data() + static_cast<std::size_t>(k) * m.classifier.in;
      const double* wrow = m.classifier.w.data() + static_cast<std::size_t>(k) * m.classifier.in;
      for (int f = 0; f < m.classifier.in; ++f) {
        gwrow[f] += d * fp[f];
        gfp[f] += d * wrow[f];
      }
    }
  }

  // walk the stack backwards
  Tensor4 gcur = std::move(gfeat);
  std::size_t bi = m.blocks.size();
  for (std::size_t li = m.genome.layers.size(); li-- > 0;) {
    const LayerGene& gene = m.genome.layers[li];
    if (is_skip(gene)) {
      --bi;
      SkipBlockGrads bg =
          skip_block_backward(traces[li].input, m.blocks[bi], traces[li].skip, gcur);
      const std::size_t s = block_slot[bi];
      grads.g[s] = std::move(bg.gw1.v);
      grads.g[s + 1] = std::move(bg.gb1);
      grads.g[s + 2] = std::move(bg.gw2.v);
      grads.g[s + 3] = std::move(bg.gb2);
      if (m.blocks[bi].projection) grads.g[s + 4] = std::move(bg.gwp.v);
      gcur = std::move(bg.gx);
    } else {
      gcur = pool2x2_backward(traces[li].input, gcur, std::get<PoolGene>(gene).kind);
    }
  }
  return ce.loss;
}

std::vector<double> model_predict(const ModelState& m, const Tensor4& batch) {
  Tensor4 cur = batch;
  std::size_t block_idx = 0;
  for (const LayerGene& gene : m.genome.layers) {
    if (is_skip(gene)) {
      cur = skip_block_forward(cur, m.blocks[block_idx], nullptr);
      ++block_idx;
    } else {
      cur = pool2x2_forward(cur, std::get<PoolGene>(gene).kind);
    }
  }
  const std::vector<double> logits = classifier_logits(m.classifier, cur);
  return softmax_rows(logits, batch.n, m.classes);
}

void sgd_momentum_step(ModelState& m, const Gradients& grads, double lr, double momentum) {
  std::size_t idx = 0;
  for_each_param(m, [&](std::vector<double>& value, std::vector<double>& vel) {
    const std::vector<double>& g = grads.g[idx++];
    if (g.size() != value.size()) throw ShapeError("sgd step: gradient shape mismatch");
    for (std::size_t k = 0; k < value.size(); ++k) {
      vel[k] = momentum * vel[k] + g[k];
      value[k] -= lr * vel[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

Tensor4 gather_batch(const Dataset& data, std::span<const std::uint32_t> idx,
                     std::vector<int>& labels_out) {
  const Tensor4& img = data.images;
  Tensor4 batch(static_cast<int>(idx.size()), img.c, img.h, img.w);
  const std::size_t sample = batch.size() / idx.size();
  labels_out.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(img.v.data() + sample * idx[i], sample, batch.v.data() + sample * i);
    labels_out[i] = data.labels[idx[i]];
  }
  return batch;
}

}  // namespace

TrainMetrics train(ModelState& m, const Dataset& data, int epochs_target,
                   const TrainHyper& hyper) {
  if (epochs_target <= m.epochs_completed)
    throw std::invalid_argument("epochs_target must exceed epochs already completed");
  const int n = static_cast<int>(data.labels.size());
  if (n == 0) throw std::invalid_argument("empty training set");

  TrainMetrics metrics;
  std::vector<std::uint32_t> order(n);
  Gradients grads;
  for (int epoch = static_cast<int>(m.epochs_completed) + 1; epoch <= epochs_target; ++epoch) {
    const double lr = lr_for_epoch(epoch, hyper.lr);
    const std::uint64_t epoch_seed = m.rng_cursor;
    m.rng_cursor = mix64(m.rng_cursor + 0x9e3779b97f4a7c15ull);

    std::iota(order.begin(), order.end(), 0u);
    Rng shuffle_rng(epoch_seed);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.below(static_cast<std::uint64_t>(i) + 1)]);

    double loss_sum = 0.0;
    std::vector<int> labels;
    for (int start = 0; start < n; start += hyper.batch_size) {
      const int count = std::min(hyper.batch_size, n - start);
      const Tensor4 batch =
          gather_batch(data, std::span(order).subspan(start, count), labels);
      const double loss = model_forward_backward(m, batch, labels, grads);
      if (!std::isfinite(loss)) throw Diverged(epoch);
      sgd_momentum_step(m, grads, lr, hyper.momentum);
      loss_sum += loss * count;
    }
    metrics.epoch_losses.push_back(loss_sum / n);
    m.epochs_completed = epoch;
  }
  return metrics;
}

double test_accuracy(const ModelState& m, const Dataset& data) {
  const int n = static_cast<int>(data.labels.size());
  if (n == 0) return 0.0;
  constexpr int kEvalBatch = 128;
  int correct = 0;
  std::vector<std::uint32_t> idx(kEvalBatch);
  std::vector<int> labels;
  for (int start = 0; start < n; start += kEvalBatch) {
    const int count = std::min(kEvalBatch, n - start);
    idx.resize(count);
    std::iota(idx.begin(), idx.end(), static_cast<std::uint32_t>(start));
    const Tensor4 batch = gather_batch(data, idx, labels);
    const std::vector<double> probs = model_predict(m, batch);
    for (int i = 0; i < count; ++i) {
      const double* row = probs.data() + static_cast<std::size_t>(i) * m.classes;
      const int pred =
          static_cast<int>(std::max_element(row, row + m.classes) - row);
      correct += pred == labels[i] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / n;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64_array(std::vector<std::uint8_t>& out, std::span<const double> v) {
  const std::size_t pos = out.size();
  out.resize(pos + v.size() * 8);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + pos, v.data(), v.size() * 8);
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(v[i]);
      for (int b = 0; b < 8; ++b)
        out[pos + i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::string str(std::size_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), len);
    pos_ += len;
    return s;
  }

  void f64_array(std::vector<double>& out, std::size_t count) {
    need(count * 8);
    out.resize(count);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, count * 8);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
          bits |= static_cast<std::uint64_t>(bytes_[pos_ + i * 8 + b]) << (8 * b);
        out[i] = std::bit_cast<double>(bits);
      }
    }
    pos_ += count * 8;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > bytes_.size()) throw CheckpointError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_array(std::vector<std::uint8_t>& out, std::span<const std::uint64_t> dims,
               std::span<const double> value, std::span<const double> momentum) {
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (std::uint64_t d : dims) put_u64(out, d);
  put_f64_array(out, value);
  put_f64_array(out, momentum);
}

std::vector<std::uint64_t> tensor_dims(const Tensor4& t) {
  return {static_cast<std::uint64_t>(t.n), static_cast<std::uint64_t>(t.c),
          static_cast<std::uint64_t>(t.h), static_cast<std::uint64_t>(t.w)};
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ModelState& m) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  const std::string key = canonical_key(m.genome);
  put_u32(out, static_cast<std::uint32_t>(key.size()));
  out.insert(out.end(), key.begin(), key.end());
  put_u64(out, static_cast<std::uint64_t>(m.epochs_completed));
  put_u64(out, m.rng_cursor);
  put_u32(out, static_cast<std::uint32_t>(m.input.height));
  put_u32(out, static_cast<std::uint32_t>(m.input.width));
  put_u32(out, static_cast<std::uint32_t>(m.input.channels));
  put_u32(out, static_cast<std::uint32_t>(m.classes));
  put_u32(out, static_cast<std::uint32_t>(param_array_count(m)));

  std::size_t idx = 0;
  for (const SkipBlockParams& b : m.blocks) {
    put_array(out, tensor_dims(b.conv1.w), b.conv1.w.v, m.momentum[idx]); ++idx;
    const std::uint64_t b1[] = {b.conv1.b.size()};
    put_array(out, b1, b.conv1.b, m.momentum[idx]); ++idx;
    put_array(out, tensor_dims(b.conv2.w), b.conv2.w.v, m.momentum[idx]); ++idx;
    const std::uint64_t b2[] = {b.conv2.b.size()};
    put_array(out, b2, b.conv2.b, m.momentum[idx]); ++idx;
    if (b.projection) {
      put_array(out, tensor_dims(b.projection->w), b.projection->w.v, m.momentum[idx]);
      ++idx;
    }
  }
  const std::uint64_t wd[] = {static_cast<std::uint64_t>(m.classifier.out),
                              static_cast<std::uint64_t>(m.classifier.in)};
  put_array(out, wd, m.classifier.w, m.momentum[idx]); ++idx;
  const std::uint64_t bd[] = {m.classifier.b.size()};
  put_array(out, bd, m.classifier.b, m.momentum[idx]);
  return out;
}

namespace {

void read_array(ByteReader& r, std::span<const std::uint64_t> want_dims,
                std::vector<double>& value, std::vector<double>& momentum) {
  const std::uint32_t ndim = r.u32();
  if (ndim != want_dims.size()) throw CheckpointError("checkpoint array rank mismatch");
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const std::uint64_t d = r.u64();
    if (d != want_dims[i]) throw CheckpointError("checkpoint array shape mismatch");
    count *= d;
  }
  r.f64_array(value, count);
  r.f64_array(momentum, count);
}

}  // namespace

ModelState deserialize_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw CheckpointError("bad checkpoint magic");
  if (r.u32() != kVersion) throw CheckpointError("unsupported checkpoint version");
  const std::string key = r.str(r.u32());
  Genome genome;
  try {
    genome = parse_key(key);
  } catch (const KeyParseError& e) {
    throw CheckpointError(std::string("bad genome key in checkpoint: ") + e.what());
  }
  const std::uint64_t epochs = r.u64();
  const std::uint64_t cursor = r.u64();
  ShapeSpec input{static_cast<int>(r.u32()), static_cast<int>(r.u32()),
                  static_cast<int>(r.u32())};
  // ShapeSpec is {height, width, channels}; fields were written in that order.
  const int classes = static_cast<int>(r.u32());

  ModelState m = make_skeleton(genome, input, classes);
  if (r.u32() != param_array_count(m)) throw CheckpointError("checkpoint array count mismatch");
  m.epochs_completed = static_cast<std::int64_t>(epochs);
  m.rng_cursor = cursor;

  std::size_t idx = 0;
  for (SkipBlockParams& b : m.blocks) {
    read_array(r, tensor_dims(b.conv1.w), b.conv1.w.v, m.momentum[idx]); ++idx;
    const std::uint64_t b1[] = {b.conv1.b.size()};
    read_array(r, b1, b.conv1.b, m.momentum[idx]); ++idx;
    read_array(r, tensor_dims(b.conv2.w), b.conv2.w.v, m.momentum[idx]); ++idx;
    const std::uint64_t b2[] = {b.conv2.b.size()};
    read_array(r, b2, b.conv2.b, m.momentum[idx]); ++idx;
    if (b.projection) {
      read_array(r, tensor_dims(b.projection->w), b.projection->w.v, m.momentum[idx]);
      ++idx;
    }
  }
  const std::uint64_t wd[] = {static_cast<std::uint64_t>(m.classifier.out),
                              static_cast<std::uint64_t>(m.classifier.in)};
  read_array(r, wd, m.classifier.w, m.momentum[idx]); ++idx;
  const std::uint64_t bd[] = {m.classifier.b.size()};
  read_array(r, bd, m.classifier.b, m.momentum[idx]);
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return m;
}

void save_checkpoint(const std::string& path, const ModelState& m) {
  const std::vector<std::uint8_t> bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to checkpoint: " + path);
}

ModelState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw CheckpointError("short read from checkpoint: " + path);
  return deserialize_model(bytes);
}

}  // namespace evocnn
