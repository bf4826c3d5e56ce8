// Copyright 2026 The volseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Forward/backward numeric kernels shared by inference code and the autograd
// graph. Everything here is a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <limits>

#include "volseg/tensor.hpp"

namespace volseg::kern {

inline int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

namespace detail {
// Range of output columns whose input column ox*stride+kx-pad lies in [0, in).
inline void valid_range(int in, int out, int k_off, int stride, int pad, int& lo, int& hi) {
  const int shift = k_off - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  hi = (in - 1 - shift) >= 0 ? (in - 1 - shift) / stride : -1;
  hi = std::min(hi, out - 1);
}
}  // namespace detail

/// x [B,Ci,H,W], w [Co,Ci,K,K], b [Co] -> [B,Co,Ho,Wo]
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1) || w.dim(2) != w.dim(3) ||
      b.size() != static_cast<std::size_t>(w.dim(0))) {
    throw ValidationError("conv2d: incompatible shapes x=" + shape_str(x.shape) + " w=" + shape_str(w.shape));
  }
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = conv_out_size(H, K, stride, pad), Wo = conv_out_size(W, K, stride, pad);
  Tensor<T> y({B, Co, Ho, Wo});
  for (int n = 0; n < B; ++n) {
    for (int co = 0; co < Co; ++co) {
      T* yp = &y.at(n, co, 0, 0);
      std::fill(yp, yp + static_cast<std::size_t>(Ho) * Wo, b[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xp = &x.at(n, ci, 0, 0);
        for (int ky = 0; ky < K; ++ky) {
          int oy_lo, oy_hi;
          detail::valid_range(H, Ho, ky, stride, pad, oy_lo, oy_hi);
          for (int kx = 0; kx < K; ++kx) {
            const T wv = w.at(co, ci, ky, kx);
            int ox_lo, ox_hi;
            detail::valid_range(W, Wo, kx, stride, pad, ox_lo, ox_hi);
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const T* xrow = xp + static_cast<std::size_t>(oy * stride + ky - pad) * W + (kx - pad);
              T* yrow = yp + static_cast<std::size_t>(oy) * Wo;
              if (stride == 1) {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
              } else {
                for (int ox = ox_lo; ox <= ox_hi; ++ox) yrow[ox] += wv * xrow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

/// Accumulates gradients of conv2d into gx, gw, gb (any may be null).
template <class T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, int stride, int pad,
                     Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const int B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0), K = w.dim(2);
  const int Ho = gy.dim(2), Wo = gy.dim(3);
  for (int n = 0; n < B; ++n) {
    for (int co = 0; co < Co; ++co) {
      const T* gp = &gy.at(n, co, 0, 0);
      if (gb) {
        T s = 0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(Ho) * Wo; ++i) s += gp[i];
        (*gb)[co] += s;
      }
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xp = &x.at(n, ci, 0, 0);
        T* gxp = gx ? &gx->at(n, ci, 0, 0) : nullptr;
        for (int ky = 0; ky < K; ++ky) {
          int oy_lo, oy_hi;
          detail::valid_range(H, Ho, ky, stride, pad, oy_lo, oy_hi);
          for (int kx = 0; kx < K; ++kx) {
            const T wv = w.at(co, ci, ky, kx);
            int ox_lo, ox_hi;
            detail::valid_range(W, Wo, kx, stride, pad, ox_lo, ox_hi);
            T wacc = 0;
            for (int oy = oy_lo; oy <= oy_hi; ++oy) {
              const std::size_t xoff = static_cast<std::size_t>(oy * stride + ky - pad) * W + (kx - pad);
              const T* grow = gp + static_cast<std::size_t>(oy) * Wo;
              const T* xrow = xp + xoff;
              for (int ox = ox_lo; ox <= ox_hi; ++ox) wacc += grow[ox] * xrow[ox * stride];
              if (gxp) {
                T* gxrow = gxp + xoff;
                for (int ox = ox_lo; ox <= ox_hi; ++ox) gxrow[ox * stride] += wv * grow[ox];
              }
            }
            if (gw) gw->at(co, ci, ky, kx) += wacc;
          }
        }
      }
    }
  }
}

/// Nearest-neighbour resize of [B,C,H,W] to [B,C,oh,ow].
template <class T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int oh, int ow) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({B, C, oh, ow});
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = static_cast<int>(static_cast<long>(oy) * H / oh);
        for (int ox = 0; ox < ow; ++ox) {
          y.at(n, c, oy, ox) = x.at(n, c, iy, static_cast<int>(static_cast<long>(ox) * W / ow));
        }
      }
  return y;
}

template <class T>
void upsample_nearest_backward(const Tensor<T>& gy, Tensor<T>& gx) {
  const int B = gx.dim(0), C = gx.dim(1), H = gx.dim(2), W = gx.dim(3);
  const int oh = gy.dim(2), ow = gy.dim(3);
  for (int n = 0; n < B; ++n)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy) {
        const int iy = static_cast<int>(static_cast<long>(oy) * H / oh);
        for (int ox = 0; ox < ow; ++ox) {
          gx.at(n, c, iy, static_cast<int>(static_cast<long>(ox) * W / ow)) += gy.at(n, c, oy, ox);
        }
      }
}

/// a [m,k] * b [k,n] -> [m,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ValidationError("matmul: incompatible shapes " + shape_str(a.shape) + " x " + shape_str(b.shape));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> c({m, n});
  for (int i = 0; i < m; ++i) {
    T* crow = &c.data[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const T av = a.data[static_cast<std::size_t>(i) * k + p];
      const T* brow = &b.data[static_cast<std::size_t>(p) * n];
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <class T>
void matmul_backward(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& g, Tensor<T>* ga, Tensor<T>* gb) {
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  for (int i = 0; i < m; ++i) {
    const T* grow = &g.data[static_cast<std::size_t>(i) * n];
    for (int p = 0; p < k; ++p) {
      const T* brow = &b.data[static_cast<std::size_t>(p) * n];
      if (ga) {
        T s = 0;
        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
        ga->data[static_cast<std::size_t>(i) * k + p] += s;
      }
      if (gb) {
        const T av = a.data[static_cast<std::size_t>(i) * k + p];
        T* gbrow = &gb->data[static_cast<std::size_t>(p) * n];
        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Memory read math.
//
// Keys are [C, M] (memory) and [C, Q] (query). Selection weights e live at
// memory positions, shrinkage s at query positions:
//   S[i][j] = -s[j] * sum_c e[c][i] * (K[c][i] - Q[c][j])^2

template <class T>
Tensor<T> similarity(const Tensor<T>& mem_key, const Tensor<T>& mem_sel, const Tensor<T>& query,
                     const Tensor<T>& shrink) {
  if (mem_key.rank() != 2 || query.rank() != 2 || mem_key.dim(0) != query.dim(0)) {
    throw ValidationError("similarity: channel mismatch " + shape_str(mem_key.shape) + " vs " +
                          shape_str(query.shape));
  }
  require_same_shape(mem_key, mem_sel, "similarity selection");
  const int C = mem_key.dim(0), M = mem_key.dim(1), Q = query.dim(1);
  if (shrink.size() != static_cast<std::size_t>(Q)) {
    throw ValidationError("similarity: shrinkage length does not match query positions");
  }
  Tensor<T> s({M, Q});
  for (int c = 0; c < C; ++c) {
    const T* krow = &mem_key.data[static_cast<std::size_t>(c) * M];
    const T* erow = &mem_sel.data[static_cast<std::size_t>(c) * M];
    const T* qrow = &query.data[static_cast<std::size_t>(c) * Q];
    for (int i = 0; i < M; ++i) {
      T* srow = &s.data[static_cast<std::size_t>(i) * Q];
      const T k = krow[i], e = erow[i];
      for (int j = 0; j < Q; ++j) {
        const T d = k - qrow[j];
        srow[j] += e * d * d;
      }
    }
  }
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < Q; ++j) s.data[static_cast<std::size_t>(i) * Q + j] *= -shrink[j];
  return s;
}

template <class T>
void similarity_backward(const Tensor<T>& mem_key, const Tensor<T>& mem_sel, const Tensor<T>& query,
                         const Tensor<T>& shrink, const Tensor<T>& g, Tensor<T>* g_key, Tensor<T>* g_sel,
                         Tensor<T>* g_query, Tensor<T>* g_shrink) {
  const int C = mem_key.dim(0), M = mem_key.dim(1), Q = query.dim(1);
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < M; ++i) {
      const T k = mem_key.at(c, i), e = mem_sel.at(c, i);
      T gk = 0, ge = 0;
      for (int j = 0; j < Q; ++j) {
        const T gij = g.at(i, j);
        const T d = k - query.at(c, j);
        const T sg = shrink[j] * gij;
        gk -= sg * e * 2 * d;
        ge -= sg * d * d;
        if (g_query) g_query->at(c, j) += sg * e * 2 * d;
        if (g_shrink) (*g_shrink)[j] -= gij * e * d * d;
      }
      if (g_key) g_key->at(c, i) += gk;
      if (g_sel) g_sel->at(c, i) += ge;
    }
  }
}

/// Softmax over the memory axis (rows) for every query column, max-subtracted.
template <class T>
Tensor<T> affinity(const Tensor<T>& s) {
  if (s.rank() != 2) throw ValidationError("affinity: expected a 2D similarity matrix");
  const int M = s.dim(0), Q = s.dim(1);
  Tensor<T> w(s.shape);
  for (int j = 0; j < Q; ++j) {
    T mx = -std::numeric_limits<T>::infinity();
    for (int i = 0; i < M; ++i) mx = std::max(mx, s.at(i, j));
    T sum = 0;
    for (int i = 0; i < M; ++i) {
      const T v = std::exp(s.at(i, j) - mx);
      w.at(i, j) = v;
      sum += v;
    }
    for (int i = 0; i < M; ++i) w.at(i, j) /= sum;
  }
  return w;
}

template <class T>
void affinity_backward(const Tensor<T>& w, const Tensor<T>& g, Tensor<T>& gs) {
  const int M = w.dim(0), Q = w.dim(1);
  for (int j = 0; j < Q; ++j) {
    T dot = 0;
    for (int i = 0; i < M; ++i) dot += w.at(i, j) * g.at(i, j);
    for (int i = 0; i < M; ++i) gs.at(i, j) += w.at(i, j) * (g.at(i, j) - dot);
  }
}

}  // namespace volseg::kern
