#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "amr/common.hpp"
#include "amr/tensor.hpp"

namespace amr {

// A learnable tensor. Gradients accumulate into `grad` during backward;
// the owner (trainer, gradient checker) is responsible for zeroing them.
// `decay` marks whether the weight-decay term applies to this parameter.
template <class T>
struct Parameter {
  std::string name;
  TensorData<T> value;
  TensorData<T> grad;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, TensorData<T> val, bool dec = true)
      : name(std::move(n)), value(std::move(val)), grad(value.shape), decay(dec) {}

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

using Var = int;

// Define-by-run reverse-mode tape. A Graph is built fresh for every forward
// pass, is single-threaded, and replays its nodes in exact reverse creation
// order on backward(). Values are immutable once created; only gradients
// accumulate.
template <class T>
class Graph {
  using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapM = Eigen::Map<EMat>;
  using CMapM = Eigen::Map<const EMat>;

  struct Node {
    TensorData<T> value;                 // owned output (unused for leaves)
    const TensorData<T>* ext_val = nullptr;
    TensorData<T> grad;                  // lazily allocated
    TensorData<T>* ext_grad = nullptr;   // parameter gradient sink
    bool needs_grad = false;
    bool grad_touched = false;
    std::function<void()> backward;
  };

 public:
  // record=false builds an inference-only graph: no backward closures, no
  // saved activations beyond the values themselves.
  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  // When set, every op validates its output for NaN/Inf.
  void set_debug_checks(bool on) { debug_checks_ = on; }

  // Distance of the forward pass from ReLU/max-pool kinks: the smallest
  // |x| seen at a ReLU input and the smallest max-vs-runner-up gap in a
  // pooling window. Finite-difference gradient checks are only meaningful
  // when this margin exceeds the probe step.
  void enable_margin_tracking() { track_margins_ = true; }
  T kink_margin() const { return std::min(relu_margin_, pool_margin_); }

  const TensorData<T>& val(Var id) const {
    const Node& n = nodes_[(size_t)id];
    return n.ext_val ? *n.ext_val : n.value;
  }

  const TensorData<T>& grad_of(Var id) {
    return grad(id);  // allocates zeros if untouched
  }

  Var input(TensorData<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n), "input");
  }

  Var leaf(Parameter<T>& p) {
    Node n;
    n.ext_val = &p.value;
    n.ext_grad = &p.grad;
    n.needs_grad = record_;
    return push(std::move(n), "leaf");
  }

  Var add(Var a, Var b) {
    const auto &A = val(a), &B = val(b);
    if (!A.same_shape(B))
      throw DimensionError("add: shape mismatch " + shape_str(A.shape) + " vs " +
                           shape_str(B.shape));
    TensorData<T> out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] + B.v[i];
    return make(std::move(out), {a, b}, [this, a, b](Var o) {
      const auto& g = grad(o);
      accumulate(a, g.v.data());
      accumulate(b, g.v.data());
    }, "add");
  }

  Var sub(Var a, Var b) {
    const auto &A = val(a), &B = val(b);
    if (!A.same_shape(B)) throw DimensionError("sub: shape mismatch");
    TensorData<T> out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] - B.v[i];
    return make(std::move(out), {a, b}, [this, a, b](Var o) {
      const auto& g = grad(o);
      accumulate(a, g.v.data());
      if (needs(b)) {
        auto& gb = grad(b);
        for (int64_t i = 0; i < g.size(); ++i) gb.v[i] -= g.v[i];
      }
    }, "sub");
  }

  Var scale(Var a, T s) {
    const auto& A = val(a);
    TensorData<T> out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] * s;
    return make(std::move(out), {a}, [this, a, s](Var o) {
      const auto& g = grad(o);
      if (!needs(a)) return;
      auto& ga = grad(a);
      for (int64_t i = 0; i < g.size(); ++i) ga.v[i] += s * g.v[i];
    }, "scale");
  }

  Var mul(Var a, Var b) {
    const auto &A = val(a), &B = val(b);
    if (!A.same_shape(B)) throw DimensionError("mul: shape mismatch");
    TensorData<T> out(A.shape);
    for (int64_t i = 0; i < A.size(); ++i) out.v[i] = A.v[i] * B.v[i];
    return make(std::move(out), {a, b}, [this, a, b](Var o) {
      const auto& g = grad(o);
      const auto &A2 = val(a), &B2 = val(b);
      if (needs(a)) {
        auto& ga = grad(a);
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] += B2.v[i] * g.v[i];
      }
      if (needs(b)) {
        auto& gb = grad(b);
        for (int64_t i = 0; i < g.size(); ++i) gb.v[i] += A2.v[i] * g.v[i];
      }
    }, "mul");
  }

  Var matmul(Var a, Var b) {
    const auto &A = val(a), &B = val(b);
    if (A.ndim() != 2 || B.ndim() != 2 || A.dim(1) != B.dim(0))
      throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape) +
                           " x " + shape_str(B.shape));
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    TensorData<T> out({m, n});
    MapM(out.v.data(), m, n).noalias() =
        CMapM(A.v.data(), m, k) * CMapM(B.v.data(), k, n);
    return make(std::move(out), {a, b}, [this, a, b, m, k, n](Var o) {
      auto& g = grad(o);
      if (debug::corrupted("matmul"))
        for (auto& x : g.v) x *= T(1.01);
      CMapM G(g.v.data(), m, n);
      if (needs(a))
        MapM(grad(a).v.data(), m, k).noalias() +=
            G * CMapM(val(b).v.data(), k, n).transpose();
      if (needs(b))
        MapM(grad(b).v.data(), k, n).noalias() +=
            CMapM(val(a).v.data(), m, k).transpose() * G;
    }, "matmul");
  }

  // y = x * W + b  (rows of x are samples; b broadcasts over rows)
  Var linear(Var x, Var w, Var b) {
    const auto &X = val(x), &W = val(w), &B = val(b);
    if (X.ndim() != 2 || W.ndim() != 2 || X.dim(1) != W.dim(0))
      throw DimensionError("linear: incompatible shapes " + shape_str(X.shape) +
                           " x " + shape_str(W.shape));
    const int r = X.dim(0), din = X.dim(1), dout = W.dim(1);
    if (B.size() != dout) throw DimensionError("linear: bias size mismatch");
    TensorData<T> out({r, dout});
    MapM O(out.v.data(), r, dout);
    O.noalias() = CMapM(X.v.data(), r, din) * CMapM(W.v.data(), din, dout);
    O.rowwise() += Eigen::Map<const Eigen::RowVectorX<T>>(B.v.data(), dout);
    return make(std::move(out), {x, w, b}, [this, x, w, b, r, din, dout](Var o) {
      const auto& g = grad(o);
      CMapM G(g.v.data(), r, dout);
      if (needs(x))
        MapM(grad(x).v.data(), r, din).noalias() +=
            G * CMapM(val(w).v.data(), din, dout).transpose();
      if (needs(w))
        MapM(grad(w).v.data(), din, dout).noalias() +=
            CMapM(val(x).v.data(), r, din).transpose() * G;
      if (needs(b))
        Eigen::Map<Eigen::RowVectorX<T>>(grad(b).v.data(), dout) +=
            G.colwise().sum();
    }, "linear");
  }

  // Cross-correlation. x is (B,C,H,W) or (C,H,W); w is (Co,C,kh,kw).
  // Output extents must divide exactly: H' = (H + 2*pad - kh)/stride + 1.
  Var conv2d(Var x, Var w, int stride = 1, int pad = 0) {
    const auto &X = val(x), &W = val(w);
    const bool batched = X.ndim() == 4;
    if (!(batched || X.ndim() == 3) || W.ndim() != 4)
      throw DimensionError("conv2d: expected (B,C,H,W) or (C,H,W) input");
    const int bs = batched ? X.dim(0) : 1;
    const int c = X.dim(batched ? 1 : 0), h = X.dim(batched ? 2 : 1),
              wd = X.dim(batched ? 3 : 2);
    const int co = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    if (W.dim(1) != c) throw DimensionError("conv2d: channel mismatch");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
      throw ConfigError("conv2d: kernel larger than padded input");
    if ((h + 2 * pad - kh) % stride || (wd + 2 * pad - kw) % stride)
      throw ConfigError(strfmt(
          "conv2d: non-integral output extent for input %dx%d kernel %dx%d "
          "stride %d pad %d", h, wd, kh, kw, stride, pad));
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    const int K = c * kh * kw, N = oh * ow;

    TensorData<T> out(batched ? std::vector<int>{bs, co, oh, ow}
                              : std::vector<int>{co, oh, ow});
    {
      std::vector<T>& col = scratch_;
      col.resize((size_t)K * N);
      CMapM Wm(W.v.data(), co, K);
      for (int b = 0; b < bs; ++b) {
        im2col_into(X.v.data() + (size_t)b * c * h * wd, c, h, wd, kh, kw,
                    stride, pad, oh, ow, col.data(), (size_t)N);
        MapM(out.v.data() + (size_t)b * co * N, co, N).noalias() =
            Wm * CMapM(col.data(), K, N);
      }
    }
    ConvDims d{bs, c, h, wd, co, kh, kw, stride, pad, oh, ow};
    return make(std::move(out), {x, w}, [this, x, w, d](Var o) {
      auto& g = grad(o);
      if (debug::corrupted("conv2d"))
        for (auto& gv : g.v) gv *= T(1.01);
      conv2d_backward(x, w, d, g);
    }, "conv2d");
  }

  // per-channel bias for conv activations: x (B,C,H,W) or (C,H,W), b (C)
  Var channel_bias(Var x, Var b) {
    const auto &X = val(x), &B = val(b);
    const bool batched = X.ndim() == 4;
    const int bs = batched ? X.dim(0) : 1;
    const int c = X.dim(batched ? 1 : 0);
    const int hw = X.dim(batched ? 2 : 1) * X.dim(batched ? 3 : 2);
    if (B.size() != c) throw DimensionError("channel_bias: size mismatch");
    TensorData<T> out(X.shape);
    const T* src = X.v.data();
    T* dst = out.v.data();
    for (int bi = 0; bi < bs; ++bi)
      for (int ci = 0; ci < c; ++ci) {
        const T bias = B.v[(size_t)ci];
        for (int i = 0; i < hw; ++i) *dst++ = *src++ + bias;
      }
    return make(std::move(out), {x, b}, [this, x, b, bs, c, hw](Var o) {
      const auto& g = grad(o);
      if (needs(x)) accumulate(x, g.v.data());
      if (needs(b)) {
        auto& gb = grad(b);
        const T* gp = g.v.data();
        for (int bi = 0; bi < bs; ++bi)
          for (int ci = 0; ci < c; ++ci) {
            T s = T(0);
            for (int i = 0; i < hw; ++i) s += *gp++;
            gb.v[(size_t)ci] += s;
          }
      }
    }, "channel_bias");
  }

  Var relu(Var x) {
    const auto& X = val(x);
    TensorData<T> out(X.shape);
    for (int64_t i = 0; i < X.size(); ++i) out.v[i] = X.v[i] > T(0) ? X.v[i] : T(0);
    if (track_margins_)
      for (int64_t i = 0; i < X.size(); ++i)
        relu_margin_ = std::min(relu_margin_, std::abs(X.v[i]));
    return make(std::move(out), {x}, [this, x](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      const auto& X2 = val(x);
      auto& gx = grad(x);
      for (int64_t i = 0; i < g.size(); ++i)
        if (X2.v[i] > T(0)) gx.v[i] += g.v[i];
    }, "relu");
  }

  // tanh approximation of GELU
  Var gelu(Var x) {
    const auto& X = val(x);
    TensorData<T> out(X.shape);
    for (int64_t i = 0; i < X.size(); ++i) out.v[i] = gelu_fwd(X.v[i]);
    return make(std::move(out), {x}, [this, x](Var o) {
      if (!needs(x)) return;
      auto& g = grad(o);
      if (debug::corrupted("gelu"))
        for (auto& gv : g.v) gv *= T(1.01);
      const auto& X2 = val(x);
      auto& gx = grad(x);
      for (int64_t i = 0; i < g.size(); ++i) gx.v[i] += gelu_bwd(X2.v[i]) * g.v[i];
    }, "gelu");
  }

  Var maxpool2(Var x) {
    const auto& X = val(x);
    const bool batched = X.ndim() == 4;
    const int bs = batched ? X.dim(0) : 1;
    const int c = X.dim(batched ? 1 : 0), h = X.dim(batched ? 2 : 1),
              wd = X.dim(batched ? 3 : 2);
    if (h < 2 || wd < 2) throw DimensionError("maxpool2: input smaller than 2x2");
    const int oh = h / 2, ow = wd / 2;
    TensorData<T> out(batched ? std::vector<int>{bs, c, oh, ow}
                              : std::vector<int>{c, oh, ow});
    auto arg = std::make_shared<std::vector<int32_t>>(out.v.size());
    int64_t oi = 0;
    for (int b = 0; b < bs; ++b)
      for (int ci = 0; ci < c; ++ci) {
        const T* plane = X.v.data() + ((size_t)b * c + ci) * h * wd;
        for (int y = 0; y < oh; ++y)
          for (int xo = 0; xo < ow; ++xo, ++oi) {
            int base = (2 * y) * wd + 2 * xo;
            int best = base;
            T m = plane[base];
            if (plane[base + 1] > m) { m = plane[base + 1]; best = base + 1; }
            if (plane[base + wd] > m) { m = plane[base + wd]; best = base + wd; }
            if (plane[base + wd + 1] > m) { m = plane[base + wd + 1]; best = base + wd + 1; }
            out.v[(size_t)oi] = m;
            (*arg)[(size_t)oi] = best;
            // ties between relu-clamped zeros are flat, not kinks
            if (track_margins_ && m > T(0))
              for (int off : {base, base + 1, base + wd, base + wd + 1})
                if (off != best)
                  pool_margin_ = std::min(pool_margin_, m - plane[off]);
          }
      }
    return make(std::move(out), {x}, [this, x, arg, bs, c, h, wd, oh, ow](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      int64_t i = 0;
      for (int b = 0; b < bs; ++b)
        for (int ci = 0; ci < c; ++ci) {
          T* plane = gx.v.data() + ((size_t)b * c + ci) * h * wd;
          for (int p = 0; p < oh * ow; ++p, ++i) plane[(*arg)[(size_t)i]] += g.v[(size_t)i];
        }
    }, "maxpool2");
  }

  // (B,C,H,W) -> (B,C) or (C,H,W) -> (C): per-channel spatial mean
  Var global_avg_pool(Var x) {
    const auto& X = val(x);
    const bool batched = X.ndim() == 4;
    if (!(batched || X.ndim() == 3))
      throw DimensionError("global_avg_pool: expected 3D or 4D input");
    const int bs = batched ? X.dim(0) : 1;
    const int c = X.dim(batched ? 1 : 0);
    const int hw = X.dim(batched ? 2 : 1) * X.dim(batched ? 3 : 2);
    TensorData<T> out(batched ? std::vector<int>{bs, c} : std::vector<int>{c});
    const T* src = X.v.data();
    for (int i = 0; i < bs * c; ++i) {
      T s = T(0);
      for (int j = 0; j < hw; ++j) s += *src++;
      out.v[(size_t)i] = s / T(hw);
    }
    return make(std::move(out), {x}, [this, x, bs, c, hw](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      T* dst = gx.v.data();
      for (int i = 0; i < bs * c; ++i) {
        const T gi = g.v[(size_t)i] / T(hw);
        for (int j = 0; j < hw; ++j) *dst++ += gi;
      }
    }, "global_avg_pool");
  }

  // Normalizes the last axis with population variance, then applies the
  // affine (gamma, beta).
  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    const auto &X = val(x), &G = val(gamma), &B = val(beta);
    if (eps <= T(0)) throw ConfigError("layer_norm: eps must be positive");
    const int d = X.dim(X.ndim() - 1);
    if (G.size() != d || B.size() != d)
      throw DimensionError("layer_norm: gamma/beta must match last extent");
    const int rows = (int)(X.size() / d);
    TensorData<T> out(X.shape);
    auto saved = std::make_shared<std::vector<T>>((size_t)rows * 2);  // mean, inv
    for (int r = 0; r < rows; ++r) {
      const T* xr = X.v.data() + (size_t)r * d;
      T* yr = out.v.data() + (size_t)r * d;
      T mean = T(0);
      for (int i = 0; i < d; ++i) mean += xr[i];
      mean /= T(d);
      T var = T(0);
      for (int i = 0; i < d; ++i) var += (xr[i] - mean) * (xr[i] - mean);
      var /= T(d);
      const T inv = T(1) / std::sqrt(var + eps);
      (*saved)[(size_t)r * 2] = mean;
      (*saved)[(size_t)r * 2 + 1] = inv;
      for (int i = 0; i < d; ++i)
        yr[i] = (xr[i] - mean) * inv * G.v[(size_t)i] + B.v[(size_t)i];
    }
    return make(std::move(out), {x, gamma, beta},
                [this, x, gamma, beta, saved, rows, d](Var o) {
      auto& g = grad(o);
      if (debug::corrupted("layer_norm"))
        for (auto& gv : g.v) gv *= T(1.01);
      const auto& X2 = val(x);
      const auto& G2 = val(gamma);
      const bool nx = needs(x), ng = needs(gamma), nb = needs(beta);
      for (int r = 0; r < rows; ++r) {
        const T mean = (*saved)[(size_t)r * 2], inv = (*saved)[(size_t)r * 2 + 1];
        const T* xr = X2.v.data() + (size_t)r * d;
        const T* gr = g.v.data() + (size_t)r * d;
        T sum_dyg = T(0), sum_dyg_xh = T(0);
        for (int i = 0; i < d; ++i) {
          const T xh = (xr[i] - mean) * inv;
          const T dyg = gr[i] * G2.v[(size_t)i];
          sum_dyg += dyg;
          sum_dyg_xh += dyg * xh;
          if (ng) grad(gamma).v[(size_t)i] += gr[i] * xh;
          if (nb) grad(beta).v[(size_t)i] += gr[i];
        }
        if (nx) {
          T* gx = grad(x).v.data() + (size_t)r * d;
          const T invd = inv / T(d);
          for (int i = 0; i < d; ++i) {
            const T xh = (xr[i] - mean) * inv;
            const T dyg = gr[i] * G2.v[(size_t)i];
            gx[i] += invd * (T(d) * dyg - sum_dyg - xh * sum_dyg_xh);
          }
        }
      }
    }, "layer_norm");
  }

  // Row-stable softmax over the last axis.
  Var softmax_rows(Var x) {
    const auto& X = val(x);
    const int d = X.dim(X.ndim() - 1);
    const int rows = (int)(X.size() / d);
    TensorData<T> out(X.shape);
    for (int r = 0; r < rows; ++r) {
      const T* xr = X.v.data() + (size_t)r * d;
      T* yr = out.v.data() + (size_t)r * d;
      T m = xr[0];
      for (int i = 1; i < d; ++i) m = std::max(m, xr[i]);
      T s = T(0);
      for (int i = 0; i < d; ++i) {
        yr[i] = std::exp(xr[i] - m);
        s += yr[i];
      }
      const T invs = T(1) / s;
      for (int i = 0; i < d; ++i) yr[i] *= invs;
    }
    return make(std::move(out), {x}, [this, x, rows, d](Var o) {
      if (!needs(x)) return;
      auto& g = grad(o);
      if (debug::corrupted("softmax"))
        for (auto& gv : g.v) gv *= T(1.01);
      const auto& Y = val(o);
      auto& gx = grad(x);
      for (int r = 0; r < rows; ++r) {
        const T* yr = Y.v.data() + (size_t)r * d;
        const T* gr = g.v.data() + (size_t)r * d;
        T dot = T(0);
        for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
        T* gxr = gx.v.data() + (size_t)r * d;
        for (int i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    }, "softmax_rows");
  }

  // 2D submatrix view (copied): rows [r0, r0+nr), cols [c0, c0+nc)
  Var block(Var x, int r0, int nr, int c0, int nc) {
    const auto& X = val(x);
    if (X.ndim() != 2) throw DimensionError("block: expected 2D input");
    const int R = X.dim(0), C = X.dim(1);
    if (r0 < 0 || c0 < 0 || r0 + nr > R || c0 + nc > C || nr <= 0 || nc <= 0)
      throw DimensionError("block: range out of bounds");
    TensorData<T> out({nr, nc});
    for (int r = 0; r < nr; ++r)
      std::copy_n(X.v.data() + (size_t)(r0 + r) * C + c0, nc,
                  out.v.data() + (size_t)r * nc);
    return make(std::move(out), {x}, [this, x, r0, nr, c0, nc, C](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      for (int r = 0; r < nr; ++r) {
        const T* gr = g.v.data() + (size_t)r * nc;
        T* dst = gx.v.data() + (size_t)(r0 + r) * C + c0;
        for (int i = 0; i < nc; ++i) dst[i] += gr[i];
      }
    }, "block");
  }

  // Concatenation of 2D tensors along axis 0 (stack rows) or 1 (side by side).
  // 1D tensors are treated as single rows for axis 0 and joined for axis 1.
  Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw UsageError("concat: empty input list");
    if (axis != 0 && axis != 1) throw UsageError("concat: axis must be 0 or 1");
    std::vector<std::pair<int, int>> dims;  // rows, cols per part
    int rows = 0, cols = 0;
    for (Var v : xs) {
      const auto& X = val(v);
      int r = X.ndim() == 1 ? 1 : X.dim(0);
      int c = X.ndim() == 1 ? X.dim(0) : X.dim(1);
      if (X.ndim() > 2) throw DimensionError("concat: expected 1D or 2D parts");
      dims.push_back({r, c});
    }
    if (axis == 0) {
      cols = dims[0].second;
      for (auto& d : dims) {
        if (d.second != cols) throw DimensionError("concat: column mismatch");
        rows += d.first;
      }
    } else {
      rows = dims[0].first;
      for (auto& d : dims) {
        if (d.first != rows) throw DimensionError("concat: row mismatch");
        cols += d.second;
      }
    }
    TensorData<T> out({rows, cols});
    if (axis == 0) {
      T* dst = out.v.data();
      for (Var v : xs) {
        const auto& X = val(v);
        std::copy(X.v.begin(), X.v.end(), dst);
        dst += X.size();
      }
    } else {
      int c0 = 0;
      for (size_t i = 0; i < xs.size(); ++i) {
        const auto& X = val(xs[i]);
        const int pc = dims[i].second;
        for (int r = 0; r < rows; ++r)
          std::copy_n(X.v.data() + (size_t)r * pc, pc,
                      out.v.data() + (size_t)r * cols + c0);
        c0 += pc;
      }
    }
    auto parts = std::make_shared<std::vector<Var>>(xs);
    auto pdims = std::make_shared<std::vector<std::pair<int, int>>>(dims);
    return make(std::move(out), xs, [this, parts, pdims, axis, rows, cols](Var o) {
      const auto& g = grad(o);
      if (axis == 0) {
        const T* src = g.v.data();
        for (size_t i = 0; i < parts->size(); ++i) {
          Var v = (*parts)[i];
          const int64_t n = (int64_t)(*pdims)[i].first * (*pdims)[i].second;
          if (needs(v)) {
            auto& gv = grad(v);
            for (int64_t j = 0; j < n; ++j) gv.v[j] += src[j];
          }
          src += n;
        }
      } else {
        int c0 = 0;
        for (size_t i = 0; i < parts->size(); ++i) {
          Var v = (*parts)[i];
          const int pc = (*pdims)[i].second;
          if (needs(v)) {
            auto& gv = grad(v);
            for (int r = 0; r < rows; ++r) {
              const T* src = g.v.data() + (size_t)r * cols + c0;
              T* dst = gv.v.data() + (size_t)r * pc;
              for (int j = 0; j < pc; ++j) dst[j] += src[j];
            }
          }
          c0 += pc;
        }
      }
    }, "concat");
  }

  Var transpose(Var x) {
    const auto& X = val(x);
    if (X.ndim() != 2) throw DimensionError("transpose: expected 2D input");
    const int r = X.dim(0), c = X.dim(1);
    TensorData<T> out({c, r});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.at(j, i) = X.at(i, j);
    return make(std::move(out), {x}, [this, x, r, c](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
    }, "transpose");
  }

  Var reshape(Var x, std::vector<int> shape) {
    const auto& X = val(x);
    if (TensorData<T>::numel(shape) != X.size())
      throw DimensionError("reshape: element count mismatch");
    TensorData<T> out(std::move(shape), X.v);
    return make(std::move(out), {x}, [this, x](Var o) {
      if (needs(x)) accumulate(x, grad(o).v.data());
    }, "reshape");
  }

  // out row i = x row indices[i]
  Var gather_rows(Var x, std::vector<int> indices) {
    const auto& X = val(x);
    if (X.ndim() != 2) throw DimensionError("gather_rows: expected 2D input");
    const int C = X.dim(1);
    TensorData<T> out({(int)indices.size(), C});
    for (size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] < 0 || indices[i] >= X.dim(0))
        throw DimensionError("gather_rows: index out of range");
      std::copy_n(X.v.data() + (size_t)indices[i] * C, C,
                  out.v.data() + i * C);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(indices));
    return make(std::move(out), {x}, [this, x, idx, C](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      for (size_t i = 0; i < idx->size(); ++i) {
        const T* src = g.v.data() + i * C;
        T* dst = gx.v.data() + (size_t)(*idx)[i] * C;
        for (int j = 0; j < C; ++j) dst[j] += src[j];
      }
    }, "gather_rows");
  }

  // column-wise mean over rows: (R,D) -> (1,D)
  Var mean_rows(Var x) {
    const auto& X = val(x);
    if (X.ndim() != 2) throw DimensionError("mean_rows: expected 2D input");
    const int R = X.dim(0), D = X.dim(1);
    TensorData<T> out({1, D});
    for (int r = 0; r < R; ++r)
      for (int i = 0; i < D; ++i) out.v[(size_t)i] += X.at(r, i);
    for (int i = 0; i < D; ++i) out.v[(size_t)i] /= T(R);
    return make(std::move(out), {x}, [this, x, R, D](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      auto& gx = grad(x);
      for (int r = 0; r < R; ++r)
        for (int i = 0; i < D; ++i) gx.at(r, i) += g.v[(size_t)i] / T(R);
    }, "mean_rows");
  }

  // mean of squared differences -> scalar
  Var mse(Var a, Var b) {
    const auto &A = val(a), &B = val(b);
    if (!A.same_shape(B)) throw DimensionError("mse: shape mismatch");
    const int64_t n = A.size();
    T s = T(0);
    for (int64_t i = 0; i < n; ++i) {
      const T d = A.v[i] - B.v[i];
      s += d * d;
    }
    TensorData<T> out({1});
    out.v[0] = s / T(n);
    return make(std::move(out), {a, b}, [this, a, b, n](Var o) {
      const T gl = grad(o).v[0] * T(2) / T(n);
      const auto &A2 = val(a), &B2 = val(b);
      if (needs(a)) {
        auto& ga = grad(a);
        for (int64_t i = 0; i < n; ++i) ga.v[i] += gl * (A2.v[i] - B2.v[i]);
      }
      if (needs(b)) {
        auto& gb = grad(b);
        for (int64_t i = 0; i < n; ++i) gb.v[i] -= gl * (A2.v[i] - B2.v[i]);
      }
    }, "mse");
  }

  Var sum(Var x) {
    const auto& X = val(x);
    TensorData<T> out({1});
    T s = T(0);
    for (T v : X.v) s += v;
    out.v[0] = s;
    return make(std::move(out), {x}, [this, x](Var o) {
      if (!needs(x)) return;
      const T gl = grad(o).v[0];
      auto& gx = grad(x);
      for (auto& v : gx.v) v += gl;
    }, "sum");
  }

  // Identity whose backward can be corrupted via debug::corrupt_backward().
  // Used to tag composite blocks (e.g. "msa") for gradcheck negative controls.
  Var dbg_tag(Var x, const char* tag) {
    TensorData<T> out = val(x);
    std::string t(tag);
    return make(std::move(out), {x}, [this, x, t](Var o) {
      if (!needs(x)) return;
      const auto& g = grad(o);
      const T f = debug::corrupted(t.c_str()) ? T(1.01) : T(1);
      auto& gx = grad(x);
      for (int64_t i = 0; i < g.size(); ++i) gx.v[i] += f * g.v[i];
    }, "dbg_tag");
  }

  // Reverse sweep from a scalar loss. Each call adds one full gradient
  // contribution: parameter gradients accumulate until their owner zeroes
  // them, intermediate gradients are reset after the sweep.
  void backward(Var loss) {
    if (!record_) throw UsageError("backward: graph built in inference mode");
    if (!val(loss).is_scalar())
      throw UsageError("backward: loss must be a scalar");
    grad(loss).v[0] += T(1);
    for (int id = loss; id >= 0; --id) {
      Node& n = nodes_[(size_t)id];
      if (n.backward && n.grad_touched) n.backward();
      if (n.grad_touched && n.ext_grad == nullptr) {
        n.grad = TensorData<T>();
        n.grad_touched = false;
      }
    }
  }

  size_t node_count() const { return nodes_.size(); }
  void reserve(size_t n) { nodes_.reserve(n); }

 private:
  struct ConvDims {
    int bs, c, h, w, co, kh, kw, stride, pad, oh, ow;
  };

  bool needs(Var id) const { return nodes_[(size_t)id].needs_grad; }

  TensorData<T>& grad(Var id) {
    Node& n = nodes_[(size_t)id];
    if (!n.grad_touched) {
      if (n.ext_grad == nullptr) n.grad = TensorData<T>(val(id).shape);
      n.grad_touched = true;
    }
    return n.ext_grad ? *n.ext_grad : n.grad;
  }

  void accumulate(Var id, const T* g) {
    if (!needs(id)) return;
    auto& dst = grad(id);
    for (int64_t i = 0; i < dst.size(); ++i) dst.v[i] += g[i];
  }

  Var push(Node&& n, const char* where) {
    if (debug_checks_) check_finite(n.ext_val ? *n.ext_val : n.value, where);
    nodes_.push_back(std::move(n));
    return (Var)nodes_.size() - 1;
  }

  Var make(TensorData<T>&& out, const std::vector<Var>& inputs,
           std::function<void(Var)> bwd, const char* where) {
    Node n;
    n.value = std::move(out);
    bool any = false;
    for (Var v : inputs) any = any || nodes_[(size_t)v].needs_grad;
    n.needs_grad = any && record_;
    Var id = push(std::move(n), where);
    if (nodes_[(size_t)id].needs_grad)
      nodes_[(size_t)id].backward = [b = std::move(bwd), id]() { b(id); };
    return id;
  }

  // writes one image's patches into a strided slice of the batch col buffer;
  // column stride is bs*N, this image's columns start at `col`
  static void im2col_into(const T* x, int c, int h, int w, int kh, int kw,
                          int stride, int pad, int oh, int ow, T* col,
                          size_t col_stride) {
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          T* row = col + ((size_t)(ci * kh + ky) * kw + kx) * col_stride;
          for (int y = 0; y < oh; ++y) {
            const int sy = y * stride + ky - pad;
            if (sy < 0 || sy >= h) {
              std::fill_n(row + (size_t)y * ow, ow, T(0));
              continue;
            }
            const T* src = x + ((size_t)ci * h + sy) * w;
            for (int xo = 0; xo < ow; ++xo) {
              const int sx = xo * stride + kx - pad;
              row[(size_t)y * ow + xo] =
                  (sx >= 0 && sx < w) ? src[sx] : T(0);
            }
          }
        }
  }

  static void col2im_add(const T* col, size_t col_stride, int c, int h, int w,
                         int kh, int kw, int stride, int pad, int oh, int ow,
                         T* x) {
    for (int ci = 0; ci < c; ++ci)
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          const T* row = col + ((size_t)(ci * kh + ky) * kw + kx) * col_stride;
          for (int y = 0; y < oh; ++y) {
            const int sy = y * stride + ky - pad;
            if (sy < 0 || sy >= h) continue;
            T* dst = x + ((size_t)ci * h + sy) * w;
            for (int xo = 0; xo < ow; ++xo) {
              const int sx = xo * stride + kx - pad;
              if (sx >= 0 && sx < w) dst[sx] += row[(size_t)y * ow + xo];
            }
          }
        }
  }

  void conv2d_backward(Var x, Var w, const ConvDims& d, const TensorData<T>& g) {
    const auto &X = val(x), &W = val(w);
    const int K = d.c * d.kh * d.kw, N = d.oh * d.ow;
    const int bs = d.bs;
    const bool nx = needs(x), nw = needs(w);
    if (d.kh == 3 && d.kw == 3 && d.stride == 1 && d.pad == 1) {
      // dX as a direct reflected stencil (no col buffer); dW as one GEMM
      // per image over the recomputed im2col patches
      std::vector<T>& col = scratch_;
      if (nw) col.resize((size_t)K * N);
      CMapM Wm(W.v.data(), d.co, K);
      for (int b = 0; b < bs; ++b) {
        const T* gb = g.v.data() + (size_t)b * d.co * N;
        if (nw) {
          im2col_into(X.v.data() + (size_t)b * d.c * N, d.c, d.h, d.w, 3, 3, 1,
                      1, d.oh, d.ow, col.data(), (size_t)N);
          MapM(grad(w).v.data(), d.co, K).noalias() +=
              CMapM(gb, d.co, N) * CMapM(col.data(), K, N).transpose();
        }
        if (nx)
          conv3x3_dx(gb, W.v.data(), grad(x).v.data() + (size_t)b * d.c * N,
                     d.c, d.co, d.h, d.w);
      }
      return;
    }
    std::vector<T>& col = scratch_;
    col.resize((size_t)K * N);
    CMapM Wm(W.v.data(), d.co, K);
    for (int b = 0; b < bs; ++b) {
      CMapM Gb(g.v.data() + (size_t)b * d.co * N, d.co, N);
      if (nw) {
        im2col_into(X.v.data() + (size_t)b * d.c * d.h * d.w, d.c, d.h, d.w,
                    d.kh, d.kw, d.stride, d.pad, d.oh, d.ow, col.data(),
                    (size_t)N);
        MapM(grad(w).v.data(), d.co, K).noalias() +=
            Gb * CMapM(col.data(), K, N).transpose();
      }
      if (nx) {
        std::vector<T>& colg = scratch2_;
        colg.resize((size_t)K * N);
        MapM(colg.data(), K, N).noalias() = Wm.transpose() * Gb;
        col2im_add(colg.data(), (size_t)N, d.c, d.h, d.w, d.kh, d.kw, d.stride,
                   d.pad, d.oh, d.ow,
                   grad(x).v.data() + (size_t)b * d.c * d.h * d.w);
      }
    }
  }

  // Direct 3x3 stride-1 pad-1 kernels on single-image planes. Row stencils
  // with restrict-qualified pointers vectorize without an im2col buffer;
  // missing border rows read from a shared zero row.
  std::vector<T>& zero_row(int wd) {
    if ((int)zrow_.size() < wd) zrow_.assign((size_t)wd, T(0));
    return zrow_;
  }

  static void stencil_row(T* __restrict dst, const T* __restrict r0,
                          const T* __restrict r1, const T* __restrict r2,
                          const T* wk, int wd) {
    const T w00 = wk[0], w01 = wk[1], w02 = wk[2];
    const T w10 = wk[3], w11 = wk[4], w12 = wk[5];
    const T w20 = wk[6], w21 = wk[7], w22 = wk[8];
    dst[0] += w01 * r0[0] + w02 * r0[1] + w11 * r1[0] + w12 * r1[1] +
              w21 * r2[0] + w22 * r2[1];
    for (int x = 1; x < wd - 1; ++x)
      dst[x] += w00 * r0[x - 1] + w01 * r0[x] + w02 * r0[x + 1] +
                w10 * r1[x - 1] + w11 * r1[x] + w12 * r1[x + 1] +
                w20 * r2[x - 1] + w21 * r2[x] + w22 * r2[x + 1];
    const int x = wd - 1;
    dst[x] += w00 * r0[x - 1] + w01 * r0[x] + w10 * r1[x - 1] + w11 * r1[x] +
              w20 * r2[x - 1] + w21 * r2[x];
  }

  void conv3x3_accumulate(const T* src, const T* w9, T* out, int c, int co,
                          int h, int wd, bool reflect) {
    const T* zr = zero_row(wd).data();
    T wk[9];
    for (int oc = 0; oc < co; ++oc) {
      T* yplane = out + (size_t)oc * h * wd;
      for (int ic = 0; ic < c; ++ic) {
        const T* xplane = src + (size_t)ic * h * wd;
        const T* wsrc = reflect ? w9 + ((size_t)ic * co + oc) * 9
                                : w9 + ((size_t)oc * c + ic) * 9;
        if (reflect)
          for (int i = 0; i < 9; ++i) wk[i] = wsrc[8 - i];
        else
          for (int i = 0; i < 9; ++i) wk[i] = wsrc[i];
        for (int y = 0; y < h; ++y) {
          const T* r0 = y > 0 ? xplane + (size_t)(y - 1) * wd : zr;
          const T* r1 = xplane + (size_t)y * wd;
          const T* r2 = y < h - 1 ? xplane + (size_t)(y + 1) * wd : zr;
          stencil_row(yplane + (size_t)y * wd, r0, r1, r2, wk, wd);
        }
      }
    }
  }

  // dL/dx = full correlation of dL/dy with the reflected kernel; kernel
  // index layout (oc, ic) is traversed transposed
  void conv3x3_dx(const T* gy, const T* w, T* gx, int c, int co, int h,
                  int wd) {
    conv3x3_accumulate(gy, w, gx, co, c, h, wd, true);
  }

  static T gelu_fwd(T x) {
    const T c = T(0.7978845608028653558798921198687);  // sqrt(2/pi)
    const T u = c * (x + T(0.044715) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
  }
  static T gelu_bwd(T x) {
    const T c = T(0.7978845608028653558798921198687);
    const T u = c * (x + T(0.044715) * x * x * x);
    const T t = std::tanh(u);
    const T du = c * (T(1) + T(3) * T(0.044715) * x * x);
    return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
  }

  bool record_;
  bool debug_checks_ = false;
  bool track_margins_ = false;
  T relu_margin_ = std::numeric_limits<T>::max();
  T pool_margin_ = std::numeric_limits<T>::max();
  std::vector<Node> nodes_;
  std::vector<T> scratch_;
  std::vector<T> scratch2_;
  std::vector<T> zrow_;
};

}  // namespace amr
