// SPDX-License-Identifier: Apache-2.0
#include "ecaf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace ecaf {

namespace {

void require_rank(const char* op, const Shape& s, Index rank) {
  if (static_cast<Index>(s.size()) != rank) throw DimensionError(op, "rank", rank, s.size());
}

// Output columns [lo, hi) whose input column o*stride + k - pad lands in [0, extent).
struct Span1d {
  Index lo, hi;
};
Span1d valid_span(Index out_extent, Index in_extent, Index stride, Index k, Index pad) {
  Index lo = 0;
  while (lo < out_extent && lo * stride + k - pad < 0) ++lo;
  Index hi = out_extent;
  while (hi > lo && (hi - 1) * stride + k - pad >= in_extent) --hi;
  return {lo, hi};
}

struct ConvGeom {
  Index B, Cin, H, W, Cout, Cg, KH, KW, Ho, Wo, stride, pad, groups;
};

ConvGeom conv_geometry(const Shape& xs, const Shape& ws, const Conv2dOptions& o, bool has_bias,
                       const Shape* bs) {
  require_rank("conv2d", xs, 4);
  require_rank("conv2d", ws, 4);
  ConvGeom g{};
  g.B = xs[0];
  g.Cin = xs[1];
  g.H = xs[2];
  g.W = xs[3];
  g.Cout = ws[0];
  g.Cg = ws[1];
  g.KH = ws[2];
  g.KW = ws[3];
  g.stride = o.stride;
  g.pad = o.pad;
  g.groups = o.groups;
  if (o.stride != 1 && o.stride != 2)
    throw DimensionError("conv2d", "stride must be 1 or 2, got " + std::to_string(o.stride));
  if (o.pad < 0) throw DimensionError("conv2d", "negative padding");
  if (o.groups < 1 || g.Cout % o.groups != 0)
    throw DimensionError("conv2d", "Cout", g.Cout - g.Cout % std::max<Index>(o.groups, 1), g.Cout);
  if (g.Cg * o.groups != g.Cin) throw DimensionError("conv2d", "Cin", g.Cg * o.groups, g.Cin);
  if (g.KH < 1 || g.KW < 1) throw DimensionError("conv2d", "empty kernel");
  if (g.H + 2 * g.pad < g.KH) throw DimensionError("conv2d", "H", g.KH - 2 * g.pad, g.H);
  if (g.W + 2 * g.pad < g.KW) throw DimensionError("conv2d", "W", g.KW - 2 * g.pad, g.W);
  if (g.H % g.stride != 0)
    throw DimensionError("conv2d", "H extent " + std::to_string(g.H) +
                                       " does not divide exactly by stride " +
                                       std::to_string(g.stride));
  if (g.W % g.stride != 0)
    throw DimensionError("conv2d", "W extent " + std::to_string(g.W) +
                                       " does not divide exactly by stride " +
                                       std::to_string(g.stride));
  if (has_bias && (bs->size() != 1 || (*bs)[0] != g.Cout))
    throw DimensionError("conv2d", "bias", g.Cout, bs->empty() ? 0 : bs->back());
  g.Ho = (g.H + 2 * g.pad - g.KH) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.KW) / g.stride + 1;
  return g;
}

// Strided and pointwise dense convs go through a patch matrix [Cin*KH*KW, Ho*Wo]
// so the strided gather happens once per image instead of once per output
// channel. Stride-1 spatial kernels stay on the direct path, whose working set
// is smaller.
bool is_pointwise(const ConvGeom& g) {
  return g.KH == 1 && g.KW == 1 && g.stride == 1 && g.pad == 0;
}

bool use_patch_matrix(const ConvGeom& g) {
  return g.groups == 1 && (g.stride > 1 || is_pointwise(g));
}

template <typename T>
void im2col(const ConvGeom& g, const T* in, T* cols) {
  const Index P = g.Ho * g.Wo;
  for (Index ic = 0; ic < g.Cin; ++ic)
    for (Index ky = 0; ky < g.KH; ++ky) {
      const auto rows = valid_span(g.Ho, g.H, g.stride, ky, g.pad);
      for (Index kx = 0; kx < g.KW; ++kx) {
        T* dst = cols + ((ic * g.KH + ky) * g.KW + kx) * P;
        std::fill(dst, dst + P, T(0));
        const auto cs = valid_span(g.Wo, g.W, g.stride, kx, g.pad);
        for (Index oy = rows.lo; oy < rows.hi; ++oy) {
          const T* src = in + (ic * g.H + oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
          T* d = dst + oy * g.Wo;
          for (Index ox = cs.lo; ox < cs.hi; ++ox) d[ox] = src[ox * g.stride];
        }
      }
    }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* cols, T* gin) {
  const Index P = g.Ho * g.Wo;
  for (Index ic = 0; ic < g.Cin; ++ic)
    for (Index ky = 0; ky < g.KH; ++ky) {
      const auto rows = valid_span(g.Ho, g.H, g.stride, ky, g.pad);
      for (Index kx = 0; kx < g.KW; ++kx) {
        const T* src = cols + ((ic * g.KH + ky) * g.KW + kx) * P;
        const auto cs = valid_span(g.Wo, g.W, g.stride, kx, g.pad);
        for (Index oy = rows.lo; oy < rows.hi; ++oy) {
          T* d = gin + (ic * g.H + oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
          const T* s = src + oy * g.Wo;
          for (Index ox = cs.lo; ox < cs.hi; ++ox) d[ox * g.stride] += s[ox];
        }
      }
    }
}

template <typename T>
void dense_forward(const ConvGeom& g, const T* x, const T* w, const T* b, T* y) {
  const Index P = g.Ho * g.Wo, R = g.Cin * g.KH * g.KW;
  std::vector<T> buffer(is_pointwise(g) ? 0 : static_cast<std::size_t>(R * P));
  for (Index n = 0; n < g.B; ++n) {
    const T* cols = x + n * g.Cin * g.H * g.W;
    if (!is_pointwise(g)) {
      im2col(g, cols, buffer.data());
      cols = buffer.data();
    }
    for (Index oc = 0; oc < g.Cout; ++oc) {
      T* out = y + (n * g.Cout + oc) * P;
      std::fill(out, out + P, b ? b[oc] : T(0));
      for (Index r = 0; r < R; ++r) {
        const T wv = w[oc * R + r];
        const T* c = cols + r * P;
#pragma omp simd
        for (Index p = 0; p < P; ++p) out[p] += wv * c[p];
      }
    }
  }
}

template <typename T>
void dense_backward(const ConvGeom& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  const Index P = g.Ho * g.Wo, R = g.Cin * g.KH * g.KW;
  const bool pointwise = is_pointwise(g);
  std::vector<T> cols_buf(pointwise || !gw ? 0 : static_cast<std::size_t>(R * P));
  std::vector<T> gcols_buf(pointwise || !gx ? 0 : static_cast<std::size_t>(R * P));
  for (Index n = 0; n < g.B; ++n) {
    const T* go = gy + n * g.Cout * P;
    if (gb)
      for (Index oc = 0; oc < g.Cout; ++oc) {
        T s = 0;
        const T* row = go + oc * P;
#pragma omp simd reduction(+ : s)
        for (Index p = 0; p < P; ++p) s += row[p];
        gb[oc] += s;
      }
    if (gw) {
      const T* cols = x + n * g.Cin * g.H * g.W;
      if (!pointwise) {
        im2col(g, cols, cols_buf.data());
        cols = cols_buf.data();
      }
      for (Index oc = 0; oc < g.Cout; ++oc) {
        const T* row = go + oc * P;
        for (Index r = 0; r < R; ++r) {
          const T* c = cols + r * P;
          T acc = 0;
#pragma omp simd reduction(+ : acc)
          for (Index p = 0; p < P; ++p) acc += row[p] * c[p];
          gw[oc * R + r] += acc;
        }
      }
    }
    if (gx) {
      T* gcols = pointwise ? gx + n * g.Cin * g.H * g.W : gcols_buf.data();
      if (!pointwise) std::fill(gcols_buf.begin(), gcols_buf.end(), T(0));
      for (Index r = 0; r < R; ++r) {
        T* dst = gcols + r * P;
        for (Index oc = 0; oc < g.Cout; ++oc) {
          const T wv = w[oc * R + r];
          const T* row = go + oc * P;
#pragma omp simd
          for (Index p = 0; p < P; ++p) dst[p] += wv * row[p];
        }
      }
      if (!pointwise) col2im_add(g, gcols, gx + n * g.Cin * g.H * g.W);
    }
  }
}

template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* w, const T* b, T* y) {
  if (use_patch_matrix(g)) return dense_forward(g, x, w, b, y);
  const Index opg = g.Cout / g.groups;
  for (Index n = 0; n < g.B; ++n) {
    for (Index oc = 0; oc < g.Cout; ++oc) {
      T* out = y + (n * g.Cout + oc) * g.Ho * g.Wo;
      std::fill(out, out + g.Ho * g.Wo, b ? b[oc] : T(0));
      const Index grp = oc / opg;
      for (Index icg = 0; icg < g.Cg; ++icg) {
        const T* in = x + (n * g.Cin + grp * g.Cg + icg) * g.H * g.W;
        const T* wk = w + (oc * g.Cg + icg) * g.KH * g.KW;
        for (Index ky = 0; ky < g.KH; ++ky) {
          const auto rows = valid_span(g.Ho, g.H, g.stride, ky, g.pad);
          for (Index kx = 0; kx < g.KW; ++kx) {
            const T wv = wk[ky * g.KW + kx];
            const auto cols = valid_span(g.Wo, g.W, g.stride, kx, g.pad);
            for (Index oy = rows.lo; oy < rows.hi; ++oy) {
              const T* src = in + (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
              T* dst = out + oy * g.Wo;
              if (g.stride == 1) {
#pragma omp simd
                for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += wv * src[ox];
              } else {
                for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += wv * src[ox * 2];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  if (use_patch_matrix(g)) return dense_backward(g, x, w, gy, gx, gw, gb);
  const Index opg = g.Cout / g.groups;
  for (Index n = 0; n < g.B; ++n) {
    for (Index oc = 0; oc < g.Cout; ++oc) {
      const T* go = gy + (n * g.Cout + oc) * g.Ho * g.Wo;
      if (gb) {
        T s = 0;
        for (Index i = 0; i < g.Ho * g.Wo; ++i) s += go[i];
        gb[oc] += s;
      }
      const Index grp = oc / opg;
      for (Index icg = 0; icg < g.Cg; ++icg) {
        const Index ic = grp * g.Cg + icg;
        const T* in = x + (n * g.Cin + ic) * g.H * g.W;
        T* gin = gx ? gx + (n * g.Cin + ic) * g.H * g.W : nullptr;
        const T* wk = w + (oc * g.Cg + icg) * g.KH * g.KW;
        T* gwk = gw ? gw + (oc * g.Cg + icg) * g.KH * g.KW : nullptr;
        for (Index ky = 0; ky < g.KH; ++ky) {
          const auto rows = valid_span(g.Ho, g.H, g.stride, ky, g.pad);
          for (Index kx = 0; kx < g.KW; ++kx) {
            const T wv = wk[ky * g.KW + kx];
            const auto cols = valid_span(g.Wo, g.W, g.stride, kx, g.pad);
            T acc = 0;
            for (Index oy = rows.lo; oy < rows.hi; ++oy) {
              const Index off = (oy * g.stride + ky - g.pad) * g.W + kx - g.pad;
              const T* grow = go + oy * g.Wo;
              const T* src = in + off;
              if (gin) {
                T* dst = gin + off;
                if (g.stride == 1) {
#pragma omp simd
                  for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[ox] += wv * grow[ox];
                } else {
                  for (Index ox = cols.lo; ox < cols.hi; ++ox) dst[ox * 2] += wv * grow[ox];
                }
              }
              if (gwk) {
                if (g.stride == 1) {
#pragma omp simd reduction(+ : acc)
                  for (Index ox = cols.lo; ox < cols.hi; ++ox) acc += grow[ox] * src[ox];
                } else {
#pragma omp simd reduction(+ : acc)
                  for (Index ox = cols.lo; ox < cols.hi; ++ox) acc += grow[ox] * src[ox * 2];
                }
              }
            }
            if (gwk) gwk[ky * g.KW + kx] += acc;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T>* sink(Tape<T>& tape, const Var<T>& v) {
  return tape.grad_sink(v);
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt) {
  const bool has_bias = b.valid();
  const ConvGeom g =
      conv_geometry(x.shape(), w.shape(), opt, has_bias, has_bias ? &b.shape() : nullptr);
  Tensor<T> y({g.B, g.Cout, g.Ho, g.Wo});
  conv_forward(g, x.value().data(), w.value().data(), has_bias ? b.value().data() : nullptr,
               y.data());
  return x.tape().record(
      "conv2d", std::move(y), {x, w, b}, [x, w, b, g](Tape<T>& tape, const Tensor<T>& gy) {
        Tensor<T>* gx = sink(tape, x);
        Tensor<T>* gw = sink(tape, w);
        Tensor<T>* gb = sink(tape, b);
        Tensor<T> local_gw;
        if (gw) local_gw = Tensor<T>(w.shape());
        conv_backward(g, x.value().data(), w.value().data(), gy.data(), gx ? gx->data() : nullptr,
                      gw ? local_gw.data() : nullptr, gb ? gb->data() : nullptr);
        if (gw) {
          const T factor = fault::grad_bug_planted() ? T(2) : T(1);
          for (Index i = 0; i < local_gw.size(); ++i) (*gw)[i] += factor * local_gw[i];
        }
      });
}

template <typename T>
Var<T> depthwise_separable_conv(const Var<T>& x, const Var<T>& dw, const Var<T>& pw,
                                const Var<T>& b) {
  require_rank("depthwise_separable_conv", x.shape(), 4);
  require_rank("depthwise_separable_conv", dw.shape(), 4);
  const Index C = x.dim(1);
  if (dw.dim(0) != C) throw DimensionError("depthwise_separable_conv", "C", C, dw.dim(0));
  if (dw.dim(1) != 1 || dw.dim(2) != 3 || dw.dim(3) != 3)
    throw DimensionError("depthwise_separable_conv",
                         "depthwise kernel must be [C,1,3,3], got " + to_string(dw.shape()));
  if (pw.shape().size() != 4 || pw.dim(2) != 1 || pw.dim(3) != 1)
    throw DimensionError("depthwise_separable_conv",
                         "pointwise kernel must be [C',C,1,1], got " + to_string(pw.shape()));
  const Var<T> depth = conv2d(x, dw, Var<T>{}, {.stride = 1, .pad = 1, .groups = C});
  return conv2d(depth, pw, b, {.stride = 1, .pad = 0, .groups = 1});
}

template <typename T>
Var<T> matmul_batched(const Var<T>& a, const Var<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2 || as.size() != bs.size())
    throw DimensionError("matmul_batched",
                         "incompatible ranks " + to_string(as) + " and " + to_string(bs));
  const std::size_t r = as.size();
  Index batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (as[i] != bs[i]) throw DimensionError("matmul_batched", "batch", as[i], bs[i]);
    batch *= as[i];
  }
  const Index m = as[r - 2], k = as[r - 1], n = bs[r - 1];
  if (bs[r - 2] != k) throw DimensionError("matmul_batched", "k", k, bs[r - 2]);
  Shape os = as;
  os[r - 1] = n;
  Tensor<T> y(os);
  const T* A = a.value().data();
  const T* Bm = b.value().data();
  T* Y = y.data();
  for (Index s = 0; s < batch; ++s)
    for (Index i = 0; i < m; ++i) {
      T* yr = Y + (s * m + i) * n;
      for (Index p = 0; p < k; ++p) {
        const T av = A[(s * m + i) * k + p];
        const T* br = Bm + (s * k + p) * n;
        for (Index j = 0; j < n; ++j) yr[j] += av * br[j];
      }
    }
  return a.tape().record("matmul_batched", std::move(y), {a, b},
                         [a, b, batch, m, k, n](Tape<T>& tape, const Tensor<T>& gy) {
                           const T* A = a.value().data();
                           const T* Bm = b.value().data();
                           const T* G = gy.data();
                           if (Tensor<T>* ga = sink(tape, a)) {
                             // dA = G B^T
                             for (Index s = 0; s < batch; ++s)
                               for (Index i = 0; i < m; ++i)
                                 for (Index p = 0; p < k; ++p) {
                                   const T* gr = G + (s * m + i) * n;
                                   const T* br = Bm + (s * k + p) * n;
                                   T acc = 0;
                                   for (Index j = 0; j < n; ++j) acc += gr[j] * br[j];
                                   (*ga)[(s * m + i) * k + p] += acc;
                                 }
                           }
                           if (Tensor<T>* gb = sink(tape, b)) {
                             // dB = A^T G
                             for (Index s = 0; s < batch; ++s)
                               for (Index i = 0; i < m; ++i)
                                 for (Index p = 0; p < k; ++p) {
                                   const T av = A[(s * m + i) * k + p];
                                   const T* gr = G + (s * m + i) * n;
                                   T* dst = gb->data() + (s * k + p) * n;
                                   for (Index j = 0; j < n; ++j) dst[j] += av * gr[j];
                                 }
                           }
                         });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.size() < 2) throw DimensionError("transpose_last2", "rank", 2, xs.size());
  const std::size_t r = xs.size();
  const Index m = xs[r - 2], n = xs[r - 1];
  const Index batch = numel(xs) / std::max<Index>(m * n, 1);
  Shape ys = xs;
  std::swap(ys[r - 2], ys[r - 1]);
  Tensor<T> y(ys);
  const T* X = x.value().data();
  for (Index s = 0; s < batch; ++s)
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < n; ++j) y[(s * n + j) * m + i] = X[(s * m + i) * n + j];
  return x.tape().record("transpose_last2", std::move(y), {x},
                         [x, batch, m, n](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* gx = sink(tape, x);
                           for (Index s = 0; s < batch; ++s)
                             for (Index i = 0; i < m; ++i)
                               for (Index j = 0; j < n; ++j)
                                 (*gx)[(s * m + i) * n + j] += gy[(s * n + j) * m + i];
                         });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(y), {x}, [x](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* gx = sink(tape, x);
    for (Index i = 0; i < gy.size(); ++i) (*gx)[i] += gy[i];
  });
}

template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.empty() || xs.back() < 1) throw DimensionError("softmax_lastdim", "last axis is empty");
  if (!x.value().all_finite()) throw NumericError("softmax_lastdim: non-finite input");
  const Index n = xs.back();
  const Index rows = numel(xs) / n;
  Tensor<T> y(xs);
  const T* X = x.value().data();
  for (Index r = 0; r < rows; ++r) {
    const T* xr = X + r * n;
    T* yr = y.data() + r * n;
    T mx = xr[0];
    for (Index j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T total = 0;
    for (Index j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (Index j = 0; j < n; ++j) yr[j] /= total;
  }
  Tensor<T> saved = y;
  return x.tape().record("softmax_lastdim", std::move(y), {x},
                         [x, saved = std::move(saved), rows, n](Tape<T>& tape,
                                                                const Tensor<T>& gy) {
                           Tensor<T>* gx = sink(tape, x);
                           for (Index r = 0; r < rows; ++r) {
                             const T* yr = saved.data() + r * n;
                             const T* gr = gy.data() + r * n;
                             T dot = 0;
                             for (Index j = 0; j < n; ++j) dot += gr[j] * yr[j];
                             T* dst = gx->data() + r * n;
                             for (Index j = 0; j < n; ++j) dst[j] += yr[j] * (gr[j] - dot);
                           }
                         });
}

template <typename T>
Var<T> resample_down(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank("resample_down", x.shape(), 4);
  if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
    throw DimensionError("resample_down", "spatial extent " + to_string(x.shape()) +
                                              " is odd; pad the input to a multiple of 4");
  const Index C = x.dim(1);
  require_rank("resample_down", w.shape(), 4);
  if (w.dim(0) != 2 * C) throw DimensionError("resample_down", "Cout", 2 * C, w.dim(0));
  if (w.dim(2) != 4 || w.dim(3) != 4)
    throw DimensionError("resample_down", "kernel must be 4x4, got " + to_string(w.shape()));
  return conv2d(x, w, b, {.stride = 2, .pad = 1, .groups = 1});
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  require_rank("upsample_nearest2x", x.shape(), 4);
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> y({B, C, 2 * H, 2 * W});
  const T* X = x.value().data();
  for (Index p = 0; p < B * C; ++p)
    for (Index oy = 0; oy < 2 * H; ++oy)
      for (Index ox = 0; ox < 2 * W; ++ox)
        y[(p * 2 * H + oy) * 2 * W + ox] = X[(p * H + oy / 2) * W + ox / 2];
  return x.tape().record("upsample_nearest2x", std::move(y), {x},
                         [x, B, C, H, W](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* gx = sink(tape, x);
                           for (Index p = 0; p < B * C; ++p)
                             for (Index oy = 0; oy < 2 * H; ++oy)
                               for (Index ox = 0; ox < 2 * W; ++ox)
                                 (*gx)[(p * H + oy / 2) * W + ox / 2] +=
                                     gy[(p * 2 * H + oy) * 2 * W + ox];
                         });
}

template <typename T>
Var<T> resample_up(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank("resample_up", x.shape(), 4);
  const Index C = x.dim(1);
  if (C % 2 != 0)
    throw DimensionError("resample_up", "channel count " + std::to_string(C) + " is odd");
  require_rank("resample_up", w.shape(), 4);
  if (w.dim(0) != C / 2) throw DimensionError("resample_up", "Cout", C / 2, w.dim(0));
  if (w.dim(2) != 1 || w.dim(3) != 1)
    throw DimensionError("resample_up", "kernel must be 1x1, got " + to_string(w.shape()));
  return conv2d(upsample_nearest2x(x), w, b, {.stride = 1, .pad = 0, .groups = 1});
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& c) {
  require_rank("concat_channels", a.shape(), 4);
  require_rank("concat_channels", c.shape(), 4);
  const char* axes[] = {"B", "C", "H", "W"};
  for (int ax : {0, 2, 3})
    if (a.dim(ax) != c.dim(ax)) throw DimensionError("concat_channels", axes[ax], a.dim(ax), c.dim(ax));
  const Index B = a.dim(0), C1 = a.dim(1), C2 = c.dim(1), HW = a.dim(2) * a.dim(3);
  Tensor<T> y({B, C1 + C2, a.dim(2), a.dim(3)});
  for (Index n = 0; n < B; ++n) {
    std::copy_n(a.value().data() + n * C1 * HW, C1 * HW, y.data() + n * (C1 + C2) * HW);
    std::copy_n(c.value().data() + n * C2 * HW, C2 * HW, y.data() + (n * (C1 + C2) + C1) * HW);
  }
  return a.tape().record("concat_channels", std::move(y), {a, c},
                         [a, c, B, C1, C2, HW](Tape<T>& tape, const Tensor<T>& gy) {
                           if (Tensor<T>* ga = sink(tape, a))
                             for (Index n = 0; n < B; ++n)
                               for (Index i = 0; i < C1 * HW; ++i)
                                 (*ga)[n * C1 * HW + i] += gy[n * (C1 + C2) * HW + i];
                           if (Tensor<T>* gc = sink(tape, c))
                             for (Index n = 0; n < B; ++n)
                               for (Index i = 0; i < C2 * HW; ++i)
                                 (*gc)[n * C2 * HW + i] += gy[(n * (C1 + C2) + C1) * HW + i];
                         });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, Index begin, Index end) {
  require_rank("slice_channels", x.shape(), 4);
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (begin < 0 || end > C || begin > end)
    throw DimensionError("slice_channels", "range [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") outside " +
                                               std::to_string(C) + " channels");
  const Index Cs = end - begin;
  Tensor<T> y({B, Cs, x.dim(2), x.dim(3)});
  for (Index n = 0; n < B; ++n)
    std::copy_n(x.value().data() + (n * C + begin) * HW, Cs * HW, y.data() + n * Cs * HW);
  return x.tape().record("slice_channels", std::move(y), {x},
                         [x, B, C, HW, begin, Cs](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* gx = sink(tape, x);
                           for (Index n = 0; n < B; ++n)
                             for (Index i = 0; i < Cs * HW; ++i)
                               (*gx)[(n * C + begin) * HW + i] += gy[n * Cs * HW + i];
                         });
}

namespace {
template <typename T>
void require_same(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError(op, "shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                                 " differ");
}
}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same("add", a, b);
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return a.tape().record("add", std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& gy) {
    for (const Var<T>* v : {&a, &b})
      if (Tensor<T>* g = sink(tape, *v))
        for (Index i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same("sub", a, b);
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.tape().record("sub", std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& gy) {
    if (Tensor<T>* g = sink(tape, a))
      for (Index i = 0; i < gy.size(); ++i) (*g)[i] += gy[i];
    if (Tensor<T>* g = sink(tape, b))
      for (Index i = 0; i < gy.size(); ++i) (*g)[i] -= gy[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same("mul", a, b);
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape().record("mul", std::move(y), {a, b}, [a, b](Tape<T>& tape, const Tensor<T>& gy) {
    if (Tensor<T>* g = sink(tape, a))
      for (Index i = 0; i < gy.size(); ++i) (*g)[i] += gy[i] * b.value()[i];
    if (Tensor<T>* g = sink(tape, b))
      for (Index i = 0; i < gy.size(); ++i) (*g)[i] += gy[i] * a.value()[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> y = a.value();
  for (Index i = 0; i < y.size(); ++i) y[i] *= s;
  return a.tape().record("scale", std::move(y), {a}, [a, s](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* g = sink(tape, a);
    for (Index i = 0; i < gy.size(); ++i) (*g)[i] += s * gy[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  return a.tape().record("sum", Tensor<T>({}, std::vector<T>{s}), {a},
                         [a](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* g = sink(tape, a);
                           for (Index i = 0; i < g->size(); ++i) (*g)[i] += gy[0];
                         });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  const Index n = a.value().size();
  if (n == 0) throw DimensionError("mean", "empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(n));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> y = a.value();
  for (auto& v : y.values()) v = v > T(0) ? v : T(0);
  return a.tape().record("relu", std::move(y), {a}, [a](Tape<T>& tape, const Tensor<T>& gy) {
    Tensor<T>* g = sink(tape, a);
    for (Index i = 0; i < gy.size(); ++i)
      if (a.value()[i] > T(0)) (*g)[i] += gy[i];
  });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tensor<T> y = a.value();
  for (auto& v : y.values()) v = std::clamp(v, lo, hi);
  return a.tape().record("clamp", std::move(y), {a},
                         [a, lo, hi](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* g = sink(tape, a);
                           for (Index i = 0; i < gy.size(); ++i) {
                             const T v = a.value()[i];
                             if (v >= lo && v <= hi) (*g)[i] += gy[i];
                           }
                         });
}

template <typename T>
Var<T> pad_spatial(const Var<T>& x, Index height, Index width) {
  require_rank("pad_spatial", x.shape(), 4);
  const Index P = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (height < H || width < W)
    throw DimensionError("pad_spatial", "target smaller than input " + to_string(x.shape()));
  Tensor<T> y({x.dim(0), x.dim(1), height, width});
  for (Index p = 0; p < P; ++p)
    for (Index r = 0; r < H; ++r)
      std::copy_n(x.value().data() + (p * H + r) * W, W, y.data() + (p * height + r) * width);
  return x.tape().record("pad_spatial", std::move(y), {x},
                         [x, P, H, W, height, width](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* g = sink(tape, x);
                           for (Index p = 0; p < P; ++p)
                             for (Index r = 0; r < H; ++r)
                               for (Index c = 0; c < W; ++c)
                                 (*g)[(p * H + r) * W + c] += gy[(p * height + r) * width + c];
                         });
}

template <typename T>
Var<T> crop_spatial(const Var<T>& x, Index height, Index width) {
  require_rank("crop_spatial", x.shape(), 4);
  const Index P = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  if (height > H || width > W || height < 0 || width < 0)
    throw DimensionError("crop_spatial", "window exceeds input " + to_string(x.shape()));
  Tensor<T> y({x.dim(0), x.dim(1), height, width});
  for (Index p = 0; p < P; ++p)
    for (Index r = 0; r < height; ++r)
      std::copy_n(x.value().data() + (p * H + r) * W, width, y.data() + (p * height + r) * width);
  return x.tape().record("crop_spatial", std::move(y), {x},
                         [x, P, H, W, height, width](Tape<T>& tape, const Tensor<T>& gy) {
                           Tensor<T>* g = sink(tape, x);
                           for (Index p = 0; p < P; ++p)
                             for (Index r = 0; r < height; ++r)
                               for (Index c = 0; c < width; ++c)
                                 (*g)[(p * H + r) * W + c] += gy[(p * height + r) * width + c];
                         });
}

template <typename T>
Var<T> channel_layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  require_rank("channel_layer_norm", x.shape(), 4);
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.value().size() != C) throw DimensionError("channel_layer_norm", "gain", C, gain.value().size());
  if (bias.value().size() != C) throw DimensionError("channel_layer_norm", "bias", C, bias.value().size());
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std({B, HW});
  Tensor<T> y(x.shape());
  const T* X = x.value().data();
  for (Index n = 0; n < B; ++n)
    for (Index p = 0; p < HW; ++p) {
      T mu = 0;
      for (Index c = 0; c < C; ++c) mu += X[(n * C + c) * HW + p];
      mu /= static_cast<T>(C);
      T var = 0;
      for (Index c = 0; c < C; ++c) {
        const T d = X[(n * C + c) * HW + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[n * HW + p] = is;
      for (Index c = 0; c < C; ++c) {
        const Index i = (n * C + c) * HW + p;
        xhat[i] = (X[i] - mu) * is;
        y[i] = xhat[i] * gain.value()[c] + bias.value()[c];
      }
    }
  return x.tape().record(
      "channel_layer_norm", std::move(y), {x, gain, bias},
      [x, gain, bias, xhat, inv_std, B, C, HW](Tape<T>& tape, const Tensor<T>& gy) {
        Tensor<T>* gx = sink(tape, x);
        Tensor<T>* gg = sink(tape, gain);
        Tensor<T>* gb = sink(tape, bias);
        for (Index n = 0; n < B; ++n)
          for (Index p = 0; p < HW; ++p) {
            T s1 = 0, s2 = 0;
            for (Index c = 0; c < C; ++c) {
              const Index i = (n * C + c) * HW + p;
              const T gh = gy[i] * gain.value()[c];
              s1 += gh;
              s2 += gh * xhat[i];
              if (gg) (*gg)[c] += gy[i] * xhat[i];
              if (gb) (*gb)[c] += gy[i];
            }
            if (!gx) continue;
            const T is = inv_std[n * HW + p];
            const T invC = T(1) / static_cast<T>(C);
            for (Index c = 0; c < C; ++c) {
              const Index i = (n * C + c) * HW + p;
              const T gh = gy[i] * gain.value()[c];
              (*gx)[i] += is * (gh - invC * s1 - xhat[i] * invC * s2);
            }
          }
      });
}

#define ECAF_INSTANTIATE(T)                                                                     \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dOptions);           \
  template Var<T> depthwise_separable_conv(const Var<T>&, const Var<T>&, const Var<T>&,         \
                                           const Var<T>&);                                      \
  template Var<T> matmul_batched(const Var<T>&, const Var<T>&);                                 \
  template Var<T> transpose_last2(const Var<T>&);                                               \
  template Var<T> reshape(const Var<T>&, Shape);                                                \
  template Var<T> softmax_lastdim(const Var<T>&);                                               \
  template Var<T> resample_down(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> upsample_nearest2x(const Var<T>&);                                            \
  template Var<T> resample_up(const Var<T>&, const Var<T>&, const Var<T>&);                     \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                \
  template Var<T> slice_channels(const Var<T>&, Index, Index);                                  \
  template Var<T> add(const Var<T>&, const Var<T>&);                                            \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                            \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> scale(const Var<T>&, T);                                                      \
  template Var<T> sum(const Var<T>&);                                                           \
  template Var<T> mean(const Var<T>&);                                                          \
  template Var<T> relu(const Var<T>&);                                                          \
  template Var<T> clamp(const Var<T>&, T, T);                                                   \
  template Var<T> pad_spatial(const Var<T>&, Index, Index);                                     \
  template Var<T> crop_spatial(const Var<T>&, Index, Index);                                    \
  template Var<T> channel_layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
