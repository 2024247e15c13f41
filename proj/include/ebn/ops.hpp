#pragma once

// Forward and backward kernels for the layer zoo. Everything here is a pure
// function of its tensor arguments; graph bookkeeping lives in tape.hpp.

#include <Eigen/Core>
#include <cmath>
#include <cstring>
#include <vector>

#include "ebn/tensor.hpp"

namespace ebn {

namespace detail {

// Unrolls conv patches into a (Cin*kh*kw) x (N*OH*OW) matrix, zero padding.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> im2col(const Tensor<S>& x, int kh, int kw, int stride, int padding,
                                                        int oh, int ow) {
  const int n_count = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Eigen::Index rows = static_cast<Eigen::Index>(cin) * kh * kw;
  const Eigen::Index pos = static_cast<Eigen::Index>(oh) * ow;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> col(rows, static_cast<Eigen::Index>(n_count) * pos);
  col.setZero();
  for (int n = 0; n < n_count; ++n) {
    for (int ci = 0; ci < cin; ++ci) {
      const S* plane = x.data() + x.offset(n, ci, 0, 0);
      for (int ky = 0; ky < kh; ++ky) {
        for (int kz = 0; kz < kw; ++kz) {
          const Eigen::Index r = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kz;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int z = 0; z < ow; ++z) {
              const int iz = z * stride - padding + kz;
              if (iz < 0 || iz >= w) continue;
              col(r, static_cast<Eigen::Index>(n) * pos + static_cast<Eigen::Index>(y) * ow + z) =
                  plane[static_cast<Eigen::Index>(iy) * w + iz];
            }
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatter-adds column gradients back onto the input grid.
template <typename S>
void col2im_add(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& gcol, Tensor<S>& gx, int kh,
                int kw, int stride, int padding, int oh, int ow) {
  const int n_count = gx.dim(0), cin = gx.dim(1), h = gx.dim(2), w = gx.dim(3);
  const Eigen::Index pos = static_cast<Eigen::Index>(oh) * ow;
  for (int n = 0; n < n_count; ++n) {
    for (int ci = 0; ci < cin; ++ci) {
      S* plane = gx.data() + gx.offset(n, ci, 0, 0);
      for (int ky = 0; ky < kh; ++ky) {
        for (int kz = 0; kz < kw; ++kz) {
          const Eigen::Index r = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kz;
          const S* row = gcol.data() + r * gcol.cols() + static_cast<Eigen::Index>(n) * pos;
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int z = 0; z < ow; ++z) {
              const int iz = z * stride - padding + kz;
              if (iz < 0 || iz >= w) continue;
              plane[static_cast<Eigen::Index>(iy) * w + iz] += row[static_cast<Eigen::Index>(y) * ow + z];
            }
          }
        }
      }
    }
  }
}

template <typename S>
void check_conv_args(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int padding) {
  if (x.ndim() != 4 || w.ndim() != 4) throw shape_error("conv2d expects 4-d input and weight");
  if (b.ndim() != 1 || b.dim(0) != w.dim(0))
    throw shape_error("conv2d bias must have one entry per output channel, got " + shape_str(b.shape()));
  if (x.dim(1) != w.dim(1))
    throw shape_error("conv2d input channels " + std::to_string(x.dim(1)) + " do not match weight channels " +
                      std::to_string(w.dim(1)));
  if (stride < 1) throw usage_error("conv2d stride must be >= 1");
  if (padding < 0) throw usage_error("conv2d padding must be >= 0");
  if (w.dim(2) > x.dim(2) + 2 * padding || w.dim(3) > x.dim(3) + 2 * padding)
    throw shape_error("conv2d kernel " + shape_str(w.shape()) + " exceeds padded input " + shape_str(x.shape()));
}

}  // namespace detail

// Cross-correlation with zero padding; out H' = (H + 2p - kh)/stride + 1.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int padding) {
  detail::check_conv_args(x, w, b, stride, padding);
  const int n_count = x.dim(0), cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = (x.dim(2) + 2 * padding - kh) / stride + 1;
  const int ow = (x.dim(3) + 2 * padding - kw) / stride + 1;
  const Eigen::Index pos = static_cast<Eigen::Index>(oh) * ow;

  auto col = detail::im2col(x, kh, kw, stride, padding, oh, ow);
  auto wmat = w.as_matrix(cout, static_cast<Eigen::Index>(cin) * kh * kw);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod = wmat * col;

  Tensor<S> out({n_count, cout, oh, ow});
  for (int n = 0; n < n_count; ++n)
    for (int co = 0; co < cout; ++co) {
      S* dst = out.data() + out.offset(n, co, 0, 0);
      const S* src = prod.data() + static_cast<Eigen::Index>(co) * prod.cols() + static_cast<Eigen::Index>(n) * pos;
      const S bias = b[co];
      for (Eigen::Index i = 0; i < pos; ++i) dst[i] = src[i] + bias;
    }
  return out;
}

template <typename S>
struct Conv2dGrads {
  Tensor<S> gx, gw, gb;
};

template <typename S>
Conv2dGrads<S> conv2d_backward(const Tensor<S>& gout, const Tensor<S>& x, const Tensor<S>& w, int stride, int padding,
                               bool need_gx = true, bool need_gw = true) {
  const int n_count = x.dim(0), cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const int oh = gout.dim(2), ow = gout.dim(3);
  const Eigen::Index pos = static_cast<Eigen::Index>(oh) * ow;
  const Eigen::Index rows = static_cast<Eigen::Index>(cin) * kh * kw;

  // Gather gout into the (Cout x N*pos) layout matching the forward product.
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gmat(cout,
                                                                         static_cast<Eigen::Index>(n_count) * pos);
  for (int n = 0; n < n_count; ++n)
    for (int co = 0; co < cout; ++co)
      std::memcpy(gmat.data() + static_cast<Eigen::Index>(co) * gmat.cols() + static_cast<Eigen::Index>(n) * pos,
                  gout.data() + gout.offset(n, co, 0, 0), sizeof(S) * static_cast<size_t>(pos));

  Conv2dGrads<S> grads;
  grads.gb = Tensor<S>({cout}, gmat.rowwise().sum().array());

  if (need_gw || need_gx) {
    auto wmat = w.as_matrix(cout, rows);
    if (need_gw) {
      auto col = detail::im2col(x, kh, kw, stride, padding, oh, ow);
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gw = gmat * col.transpose();
      grads.gw = Tensor<S>(w.shape(), Eigen::Map<const typename Tensor<S>::Array>(gw.data(), gw.size()));
    }
    if (need_gx) {
      Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcol = wmat.transpose() * gmat;
      grads.gx = Tensor<S>(x.shape());
      detail::col2im_add(gcol, grads.gx, kh, kw, stride, padding, oh, ow);
    }
  }
  return grads;
}

// out[n,k] = sum_d x[n,d] * w[k,d] + b[k].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (x.ndim() != 2 || w.ndim() != 2) throw shape_error("linear expects 2-d input and weight");
  if (x.dim(1) != w.dim(1))
    throw shape_error("linear inner dimensions disagree: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (b.ndim() != 1 || b.dim(0) != w.dim(0)) throw shape_error("linear bias must match output features");
  const int n_count = x.dim(0), k_count = w.dim(0);
  Tensor<S> out({n_count, k_count});
  auto om = out.as_matrix(n_count, k_count);
  om.noalias() = x.as_matrix(x.dim(0), x.dim(1)) * w.as_matrix(w.dim(0), w.dim(1)).transpose();
  om.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.data(), k_count);
  return out;
}

template <typename S>
struct LinearGrads {
  Tensor<S> gx, gw, gb;
};

template <typename S>
LinearGrads<S> linear_backward(const Tensor<S>& gout, const Tensor<S>& x, const Tensor<S>& w, bool need_gx = true,
                               bool need_gw = true) {
  const int n_count = x.dim(0), d_count = x.dim(1), k_count = w.dim(0);
  auto gm = gout.as_matrix(n_count, k_count);
  LinearGrads<S> grads;
  grads.gb = Tensor<S>({k_count}, gm.colwise().sum().transpose().array());
  if (need_gw) {
    grads.gw = Tensor<S>({k_count, d_count});
    grads.gw.as_matrix(k_count, d_count).noalias() = gm.transpose() * x.as_matrix(n_count, d_count);
  }
  if (need_gx) {
    grads.gx = Tensor<S>({n_count, d_count});
    grads.gx.as_matrix(n_count, d_count).noalias() = gm * w.as_matrix(k_count, d_count);
  }
  return grads;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return Tensor<S>(x.shape(), x.array().max(S(0)));
}

// Subgradient at zero is zero.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& gout, const Tensor<S>& x) {
  if (!gout.same_shape(x)) throw shape_error("relu_backward shape mismatch");
  return Tensor<S>(x.shape(), (x.array() > S(0)).select(gout.array(), S(0)));
}

template <typename S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  if (x.ndim() != 4) throw shape_error("global_avg_pool expects 4-d input");
  const int n_count = x.dim(0), c_count = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor<S> out({n_count, c_count});
  const S inv = S(1) / static_cast<S>(plane);
  for (int n = 0; n < n_count; ++n)
    for (int c = 0; c < c_count; ++c) {
      Eigen::Map<const typename Tensor<S>::Array> seg(x.data() + x.offset(n, c, 0, 0), plane);
      out.at(n, c) = seg.sum() * inv;
    }
  return out;
}

template <typename S>
Tensor<S> global_avg_pool_backward(const Tensor<S>& gout, const Shape& in_shape) {
  Tensor<S> gx(in_shape);
  const Eigen::Index plane = static_cast<Eigen::Index>(in_shape[2]) * in_shape[3];
  const S inv = S(1) / static_cast<S>(plane);
  for (int n = 0; n < in_shape[0]; ++n)
    for (int c = 0; c < in_shape[1]; ++c) {
      S v = gout.at(n, c) * inv;
      Eigen::Map<typename Tensor<S>::Array>(gx.data() + gx.offset(n, c, 0, 0), plane).setConstant(v);
    }
  return gx;
}

// Row-wise softmax with max subtraction.
template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  if (logits.ndim() != 2) throw shape_error("softmax expects 2-d logits");
  const int n_count = logits.dim(0), k_count = logits.dim(1);
  Tensor<S> probs(logits.shape());
  for (int n = 0; n < n_count; ++n) {
    Eigen::Map<const typename Tensor<S>::Array> row(logits.data() + static_cast<Eigen::Index>(n) * k_count, k_count);
    Eigen::Map<typename Tensor<S>::Array> prow(probs.data() + static_cast<Eigen::Index>(n) * k_count, k_count);
    prow = (row - row.maxCoeff()).exp();
    prow /= prow.sum();
  }
  return probs;
}

template <typename S>
struct SoftmaxCeResult {
  S loss;
  Tensor<S> probs;  // saved for the backward rule
};

template <typename S>
SoftmaxCeResult<S> softmax_cross_entropy_forward(const Tensor<S>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw shape_error("softmax_cross_entropy expects 2-d logits");
  const int n_count = logits.dim(0), k_count = logits.dim(1);
  if (static_cast<int>(labels.size()) != n_count)
    throw shape_error("label count " + std::to_string(labels.size()) + " does not match batch " +
                      std::to_string(n_count));
  for (int n = 0; n < n_count; ++n)
    if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= k_count)
      throw input_error("label " + std::to_string(labels[static_cast<size_t>(n)]) + " outside [0," +
                        std::to_string(k_count) + ") at row " + std::to_string(n));

  SoftmaxCeResult<S> res;
  res.probs = Tensor<S>(logits.shape());
  S total = 0;
  for (int n = 0; n < n_count; ++n) {
    Eigen::Map<const typename Tensor<S>::Array> row(logits.data() + static_cast<Eigen::Index>(n) * k_count, k_count);
    Eigen::Map<typename Tensor<S>::Array> prow(res.probs.data() + static_cast<Eigen::Index>(n) * k_count, k_count);
    const S mx = row.maxCoeff();
    prow = (row - mx).exp();
    const S denom = prow.sum();
    prow /= denom;
    total += -(row[labels[static_cast<size_t>(n)]] - mx - std::log(denom));
  }
  res.loss = total / static_cast<S>(n_count);
  return res;
}

template <typename S>
S softmax_cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  return softmax_cross_entropy_forward(logits, labels).loss;
}

// d loss / d logits = (softmax - onehot) / N, scaled by the upstream scalar.
template <typename S>
Tensor<S> softmax_cross_entropy_backward(S gloss, const Tensor<S>& probs, const std::vector<int>& labels) {
  const int n_count = probs.dim(0);
  Tensor<S> g(probs.shape(), (probs.array() * (gloss / static_cast<S>(n_count))).eval());
  for (int n = 0; n < n_count; ++n) g.at(n, labels[static_cast<size_t>(n)]) -= gloss / static_cast<S>(n_count);
  return g;
}

// Same-shape elementwise add (residual connections). No broadcasting.
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) throw shape_error("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return Tensor<S>(a.shape(), a.array() + b.array());
}

// y[n,c,h,w] = x[n,c,h,w] * scale[c] + shift[c]; the model's preprocessing.
template <typename S>
Tensor<S> channel_affine(const Tensor<S>& x, const Tensor<S>& scale, const Tensor<S>& shift) {
  if (x.ndim() != 4) throw shape_error("channel_affine expects 4-d input");
  if (scale.numel() != x.dim(1) || shift.numel() != x.dim(1))
    throw shape_error("channel_affine constants must have one entry per channel");
  Tensor<S> out(x.shape());
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c) {
      Eigen::Map<const typename Tensor<S>::Array> src(x.data() + x.offset(n, c, 0, 0), plane);
      Eigen::Map<typename Tensor<S>::Array> dst(out.data() + out.offset(n, c, 0, 0), plane);
      dst = src * scale[c] + shift[c];
    }
  return out;
}

template <typename S>
Tensor<S> channel_affine_backward(const Tensor<S>& gout, const Tensor<S>& scale) {
  Tensor<S> gx(gout.shape());
  const Eigen::Index plane = static_cast<Eigen::Index>(gout.dim(2)) * gout.dim(3);
  for (int n = 0; n < gout.dim(0); ++n)
    for (int c = 0; c < gout.dim(1); ++c) {
      Eigen::Map<const typename Tensor<S>::Array> src(gout.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<typename Tensor<S>::Array> dst(gx.data() + gx.offset(n, c, 0, 0), plane);
      dst = src * scale[c];
    }
  return gx;
}

// ---- batch-norm kernels ------------------------------------------------

template <typename S>
struct BnStats {
  Tensor<S> mean, var;  // biased variance over N*H*W per channel
  std::int64_t count = 0;
};

template <typename S>
BnStats<S> bn_batch_stats(const Tensor<S>& x) {
  if (x.ndim() != 4) throw shape_error("batchnorm expects 4-d input");
  const int n_count = x.dim(0), c_count = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  BnStats<S> st;
  st.count = static_cast<std::int64_t>(n_count) * plane;
  st.mean = Tensor<S>({c_count});
  st.var = Tensor<S>({c_count});
  for (int c = 0; c < c_count; ++c) {
    S sum = 0, sq = 0;
    for (int n = 0; n < n_count; ++n) {
      Eigen::Map<const typename Tensor<S>::Array> seg(x.data() + x.offset(n, c, 0, 0), plane);
      sum += seg.sum();
      sq += seg.square().sum();
    }
    const S mu = sum / static_cast<S>(st.count);
    st.mean[c] = mu;
    st.var[c] = std::max(sq / static_cast<S>(st.count) - mu * mu, S(0));
  }
  return st;
}

template <typename S>
struct BnCache {
  Tensor<S> xhat;     // normalized input
  Tensor<S> inv_std;  // per channel 1/sqrt(var + eps)
};

// y = gamma * (x - mean) / sqrt(var + eps) + beta, channel-wise.
template <typename S>
Tensor<S> bn_normalize(const Tensor<S>& x, const Tensor<S>& mean, const Tensor<S>& var, const Tensor<S>& gamma,
                       const Tensor<S>& beta, S eps, BnCache<S>* cache = nullptr) {
  const int n_count = x.dim(0), c_count = x.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(x.dim(2)) * x.dim(3);
  Tensor<S> out(x.shape());
  if (cache) {
    cache->xhat = Tensor<S>(x.shape());
    cache->inv_std = Tensor<S>({c_count});
  }
  for (int c = 0; c < c_count; ++c) {
    const S inv = S(1) / std::sqrt(var[c] + eps);
    if (cache) cache->inv_std[c] = inv;
    for (int n = 0; n < n_count; ++n) {
      Eigen::Map<const typename Tensor<S>::Array> src(x.data() + x.offset(n, c, 0, 0), plane);
      Eigen::Map<typename Tensor<S>::Array> dst(out.data() + out.offset(n, c, 0, 0), plane);
      if (cache) {
        Eigen::Map<typename Tensor<S>::Array> xh(cache->xhat.data() + out.offset(n, c, 0, 0), plane);
        xh = (src - mean[c]) * inv;
        dst = xh * gamma[c] + beta[c];
      } else {
        dst = (src - mean[c]) * inv * gamma[c] + beta[c];
      }
    }
  }
  return out;
}

template <typename S>
struct BnGrads {
  Tensor<S> gx, ggamma, gbeta;
};

// Backward through batch statistics (train phase).
template <typename S>
BnGrads<S> bn_backward_train(const Tensor<S>& gout, const BnCache<S>& cache, const Tensor<S>& gamma) {
  const int n_count = gout.dim(0), c_count = gout.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(gout.dim(2)) * gout.dim(3);
  const S m = static_cast<S>(static_cast<std::int64_t>(n_count) * plane);
  BnGrads<S> grads;
  grads.gx = Tensor<S>(gout.shape());
  grads.ggamma = Tensor<S>({c_count});
  grads.gbeta = Tensor<S>({c_count});
  for (int c = 0; c < c_count; ++c) {
    S sum_g = 0, sum_gx = 0;
    for (int n = 0; n < n_count; ++n) {
      Eigen::Map<const typename Tensor<S>::Array> g(gout.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<const typename Tensor<S>::Array> xh(cache.xhat.data() + gout.offset(n, c, 0, 0), plane);
      sum_g += g.sum();
      sum_gx += (g * xh).sum();
    }
    grads.gbeta[c] = sum_g;
    grads.ggamma[c] = sum_gx;
    const S coeff = gamma[c] * cache.inv_std[c];
    const S mean_g = sum_g / m, mean_gx = sum_gx / m;
    for (int n = 0; n < n_count; ++n) {
      Eigen::Map<const typename Tensor<S>::Array> g(gout.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<const typename Tensor<S>::Array> xh(cache.xhat.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<typename Tensor<S>::Array> gx(grads.gx.data() + gout.offset(n, c, 0, 0), plane);
      gx = coeff * (g - mean_g - xh * mean_gx);
    }
  }
  return grads;
}

// Backward with statistics held constant (eval phase / running stats).
template <typename S>
BnGrads<S> bn_backward_eval(const Tensor<S>& gout, const BnCache<S>& cache, const Tensor<S>& gamma) {
  const int n_count = gout.dim(0), c_count = gout.dim(1);
  const Eigen::Index plane = static_cast<Eigen::Index>(gout.dim(2)) * gout.dim(3);
  BnGrads<S> grads;
  grads.gx = Tensor<S>(gout.shape());
  grads.ggamma = Tensor<S>({c_count});
  grads.gbeta = Tensor<S>({c_count});
  for (int c = 0; c < c_count; ++c) {
    S sum_g = 0, sum_gx = 0;
    const S coeff = gamma[c] * cache.inv_std[c];
    for (int n = 0; n < n_count; ++n) {
      Eigen::Map<const typename Tensor<S>::Array> g(gout.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<const typename Tensor<S>::Array> xh(cache.xhat.data() + gout.offset(n, c, 0, 0), plane);
      Eigen::Map<typename Tensor<S>::Array> gx(grads.gx.data() + gout.offset(n, c, 0, 0), plane);
      sum_g += g.sum();
      sum_gx += (g * xh).sum();
      gx = g * coeff;
    }
    grads.gbeta[c] = sum_g;
    grads.ggamma[c] = sum_gx;
  }
  return grads;
}

}  // namespace ebn
