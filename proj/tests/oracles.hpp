#pragma once

// Independent brute-force references used by the test suites. These stay
// deliberately naive (plain loops, no shared code with the library math)
// so they can arbitrate the optimized implementations.

#include <cmath>
#include <vector>

#include "ebn/tensor.hpp"

namespace oracle {

// Direct 6-loop cross-correlation with zero padding.
template <typename S>
ebn::Tensor<S> conv2d(const ebn::Tensor<S>& x, const ebn::Tensor<S>& w, const ebn::Tensor<S>& b, int stride,
                      int padding) {
  const int n_count = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (wd + 2 * padding - kw) / stride + 1;
  ebn::Tensor<S> out({n_count, cout, oh, ow});
  for (int n = 0; n < n_count; ++n)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < oh; ++y)
        for (int z = 0; z < ow; ++z) {
          double acc = static_cast<double>(b[co]);
          for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < kh; ++ky)
              for (int kz = 0; kz < kw; ++kz) {
                int iy = y * stride - padding + ky;
                int iz = z * stride - padding + kz;
                if (iy < 0 || iy >= h || iz < 0 || iz >= wd) continue;
                acc += static_cast<double>(x.at(n, ci, iy, iz)) * static_cast<double>(w.at(co, ci, ky, kz));
              }
          out.at(n, co, y, z) = static_cast<S>(acc);
        }
  return out;
}

// Double-loop matmul: out[n,k] = sum_d x[n,d] * w[k,d] + b[k].
template <typename S>
ebn::Tensor<S> linear(const ebn::Tensor<S>& x, const ebn::Tensor<S>& w, const ebn::Tensor<S>& b) {
  const int n_count = x.dim(0), d_count = x.dim(1), k_count = w.dim(0);
  ebn::Tensor<S> out({n_count, k_count});
  for (int n = 0; n < n_count; ++n)
    for (int k = 0; k < k_count; ++k) {
      double acc = static_cast<double>(b[k]);
      for (int d = 0; d < d_count; ++d)
        acc += static_cast<double>(x.at(n, d)) * static_cast<double>(w.at(k, d));
      out.at(n, k) = static_cast<S>(acc);
    }
  return out;
}

// Mean softmax cross-entropy computed directly from the definition in
// long-double precision.
template <typename S>
double softmax_cross_entropy(const ebn::Tensor<S>& logits, const std::vector<int>& labels) {
  const int n_count = logits.dim(0), k_count = logits.dim(1);
  long double total = 0;
  for (int n = 0; n < n_count; ++n) {
    long double mx = logits.at(n, 0);
    for (int k = 1; k < k_count; ++k) mx = std::max<long double>(mx, logits.at(n, k));
    long double denom = 0;
    for (int k = 0; k < k_count; ++k) denom += std::exp(static_cast<long double>(logits.at(n, k)) - mx);
    total += -(static_cast<long double>(logits.at(n, labels[static_cast<size_t>(n)])) - mx - std::log(denom));
  }
  return static_cast<double>(total / n_count);
}

// Closed-form EMA after feeding a constant statistic T times with momentum m,
// starting from r0: r_T = target + (r0 - target) * (1 - m)^T.
inline double ema_after(double r0, double target, double momentum, int steps) {
  return target + (r0 - target) * std::pow(1.0 - momentum, steps);
}

}  // namespace oracle
