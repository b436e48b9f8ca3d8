#pragma once

#include <cstddef>
#include <vector>

namespace evocnn {

// Dense NCHW tensor of doubles. The 64-bit reference path keeps gradient
// checks and checkpoint determinism exact.
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

  std::size_t size() const { return v.size(); }

  double& at(int i, int ci, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + ci) * h + y) * w + x];
  }
  const double& at(int i, int ci, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + ci) * h + y) * w + x];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace evocnn
