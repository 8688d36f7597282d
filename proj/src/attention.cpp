// SPDX-License-Identifier: Apache-2.0
#include "ecaf/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>
#include <vector>

#include "ecaf/init.hpp"
#include "ecaf/ops.hpp"
#include "fast_exp.hpp"

namespace ecaf {

template <typename T>
void check_pair(const char* op, const FeaturePair<T>& pair) {
  if (pair.visual.shape() != pair.semantic.shape())
    throw DimensionError(op, "visual " + to_string(pair.visual.shape()) + " and semantic " +
                                 to_string(pair.semantic.shape()) + " differ");
}

template <typename T>
AttnParams<T> AttnParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                    Index channels, Index heads, Rng& rng, Layout layout) {
  if (heads < 1 || channels % heads != 0)
    throw ConfigError(prefix + ": channels (" + std::to_string(channels) +
                      ") not divisible by heads (" + std::to_string(heads) + ")");
  AttnParams p;
  p.channels = channels;
  p.heads = heads;
  auto proj = [&](const char* name, Parameter<T>*& w, Parameter<T>*& b) {
    w = &store.add(prefix + "." + name + "_w",
                   kaiming_uniform<T>({channels, channels, 1, 1}, channels, rng));
    b = &store.add(prefix + "." + name + "_b", Tensor<T>({channels}));
  };
  proj("q", p.q_w, p.q_b);
  proj("k", p.k_w, p.k_b);
  proj("v", p.v_w, p.v_b);
  proj("o", p.o_w, p.o_b);
  if (layout.zeta) {
    const T z = T(1) / std::sqrt(static_cast<T>(channels / heads));
    p.zeta = &store.add(prefix + ".zeta", Tensor<T>({heads}, z));
  }
  if (layout.posemb)
    p.pos_w = &store.add(prefix + ".pos_w", kaiming_uniform<T>({channels, 1, 3, 3}, 9, rng));
  if (layout.norm) {
    p.norm_gain = &store.add(prefix + ".norm_gain", Tensor<T>({channels}, T(1)));
    p.norm_bias = &store.add(prefix + ".norm_bias", Tensor<T>({channels}));
  }
  return p;
}

namespace {

template <typename T>
Var<T> project(const Var<T>& x, Parameter<T>* w, Parameter<T>* b) {
  Tape<T>& tape = x.tape();
  return conv2d(x, tape.param(*w), tape.param(*b));
}

struct AttnGeom {
  Index B, C, N, heads, dk;
};

template <typename T>
AttnGeom attn_geometry(const char* op, const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                       const Tensor<T>& zeta) {
  if (q.rank() != 4) throw DimensionError(op, "rank", 4, q.rank());
  if (k.shape() != q.shape())
    throw DimensionError(op, "key layout " + to_string(k.shape()) + " differs from query " +
                                 to_string(q.shape()));
  if (v.shape() != q.shape())
    throw DimensionError(op, "value layout " + to_string(v.shape()) + " differs from query " +
                                 to_string(q.shape()));
  if (zeta.rank() != 1) throw DimensionError(op, "zeta must be a vector");
  AttnGeom g{q.dim(0), q.dim(1), q.dim(2) * q.dim(3), zeta.dim(0), 0};
  if (g.heads < 1 || g.C % g.heads != 0) throw DimensionError(op, "heads", g.C, g.heads);
  g.dk = g.C / g.heads;
  if (g.dk > 64) throw DimensionError(op, "head width", 64, g.dk);
  return g;
}

// Scores r_j = sum_d Q[d][i] K[d][j] for one query token.
template <typename T>
void raw_scores(const T* Q, const T* K, Index dk, Index N, Index i, T* r) {
  {
    const T qd = Q[i];
#pragma omp simd
    for (Index j = 0; j < N; ++j) r[j] = qd * K[j];
  }
  for (Index d = 1; d < dk; ++d) {
    const T qd = Q[d * N + i];
    const T* kd = K + d * N;
#pragma omp simd
    for (Index j = 0; j < N; ++j) r[j] += qd * kd[j];
  }
}

// Writes exp(zeta r_j - m) into e, returns m and the row total.
template <typename T>
void softmax_row(const T* r, T zeta, Index N, T* e, T& m, T& total) {
  T mx = zeta * r[0];
#pragma omp simd reduction(max : mx)
  for (Index j = 0; j < N; ++j) {
    const T s = zeta * r[j];
    mx = s > mx ? s : mx;
  }
  T l = 0;
#pragma omp simd reduction(+ : l)
  for (Index j = 0; j < N; ++j) {
    e[j] = detail::exp_approx(zeta * r[j] - mx);
    l += e[j];
  }
  m = mx;
  total = l;
}

// Lane-blocked kernels for one (batch, head) slice. K and V are copied into a
// layout padded to a multiple of kLanes; `valid` masks the padding to exactly 0.
// Query rows are processed in tiles of RT so each key block is loaded once per
// tile. Reductions accumulate per lane and are folded in a fixed order, so
// results are deterministic for a given build.
constexpr Index kLanes = 16;
constexpr int kRowTile = 4;
#ifndef ECAF_BWD_TILE
#define ECAF_BWD_TILE 4
#endif
constexpr int kBackwardRowTile = ECAF_BWD_TILE;

template <typename T>
struct HeadSlice {
  Index dk = 0, N = 0, padded = 0;
  std::vector<T> K, V, valid;

  HeadSlice(const T* k, const T* v, Index dk_, Index n)
      : dk(dk_), N(n), padded((n + kLanes - 1) / kLanes * kLanes) {
    K.assign(static_cast<std::size_t>(dk * padded), T(0));
    V.assign(static_cast<std::size_t>(dk * padded), T(0));
    valid.assign(static_cast<std::size_t>(padded), T(0));
    for (Index d = 0; d < dk; ++d) {
      std::copy(k + d * N, k + (d + 1) * N, K.begin() + d * padded);
      std::copy(v + d * N, v + (d + 1) * N, V.begin() + d * padded);
    }
    std::fill(valid.begin(), valid.begin() + N, T(1));
    T widest = 0;
    for (Index j = 0; j < N; ++j) {
      T sq = 0;
      for (Index d = 0; d < dk; ++d) sq += k[d * N + j] * k[d * N + j];
      widest = sq > widest ? sq : widest;
    }
    key_norm_max = std::sqrt(widest);
  }

  T key_norm_max = 0;
};

// Largest |score| bound for which exp(s - bound) stays normal over s in [-bound, bound].
template <typename T>
constexpr T kSinglePassLimit = std::is_same_v<T, float> ? T(40) : T(300);

template <typename T>
T fold_lanes(const T* lanes) {
  T s = 0;
  for (Index l = 0; l < kLanes; ++l) s += lanes[l];
  return s;
}

// Head width: compile-time when DK > 0, otherwise read at run time (at most kMaxDynamicDk).
constexpr Index kMaxDynamicDk = 64;

template <int DK>
constexpr Index storage_width() {
  return DK > 0 ? DK : kMaxDynamicDk;
}

// Rows q[t*D + d], t < RT. Writes out[t*D + d], row max and row sum.
template <typename T, int DK, int RT, bool Masked>
void forward_rows(const HeadSlice<T>& hs, const T* q, T z, T* scores, T* out, T* m_out,
                  T* l_out) {
  constexpr Index W = storage_width<DK>();
  const Index D = DK > 0 ? DK : hs.dk;
  const Index P = hs.padded;
  const T* K = hs.K.data();
  const T* V = hs.V.data();
  const T* valid = hs.valid.data();

  // |z q.k| <= |z| |q| max|k| bounds every score of the row. When the bound is
  // small enough the max pass is skipped and the bound serves as the shift.
  T m[RT];
  bool bounded = true;
  for (int t = 0; t < RT; ++t) {
    T sq = 0;
    for (Index d = 0; d < D; ++d) sq += q[t * D + d] * q[t * D + d];
    m[t] = std::abs(z) * std::sqrt(sq) * hs.key_norm_max;
    bounded = bounded && m[t] <= kSinglePassLimit<T>;
  }
  if (bounded) {
    alignas(64) T total[RT][kLanes] = {};
    alignas(64) T acc[RT][W][kLanes] = {};
    for (Index jb = 0; jb < P; jb += kLanes) {
      alignas(64) T r[RT][kLanes] = {};
      for (Index d = 0; d < D; ++d) {
        const T* kd = K + d * P + jb;
        for (int t = 0; t < RT; ++t) {
          const T qd = q[t * D + d];
#pragma omp simd
          for (Index l = 0; l < kLanes; ++l) r[t][l] += qd * kd[l];
        }
      }
      for (int t = 0; t < RT; ++t) {
#pragma omp simd
        for (Index l = 0; l < kLanes; ++l) {
          r[t][l] = detail::exp_approx(z * r[t][l] - m[t]);
          if constexpr (Masked) r[t][l] *= valid[jb + l];
          total[t][l] += r[t][l];
        }
      }
      for (Index d = 0; d < D; ++d) {
        const T* vd = V + d * P + jb;
        for (int t = 0; t < RT; ++t) {
#pragma omp simd
          for (Index l = 0; l < kLanes; ++l) acc[t][d][l] += r[t][l] * vd[l];
        }
      }
    }
    for (int t = 0; t < RT; ++t) {
      const T l = fold_lanes(total[t]);
      const T inv = T(1) / l;
      for (Index d = 0; d < D; ++d) out[t * D + d] = fold_lanes(acc[t][d]) * inv;
      m_out[t] = m[t];
      l_out[t] = l;
    }
    return;
  }

  alignas(64) T mx[RT][kLanes];
  for (int t = 0; t < RT; ++t) std::fill(mx[t], mx[t] + kLanes, std::numeric_limits<T>::lowest());
  for (Index jb = 0; jb < P; jb += kLanes) {
    alignas(64) T r[RT][kLanes] = {};
    for (Index d = 0; d < D; ++d) {
      const T* kd = K + d * P + jb;
      for (int t = 0; t < RT; ++t) {
        const T qd = q[t * D + d];
#pragma omp simd
        for (Index l = 0; l < kLanes; ++l) r[t][l] += qd * kd[l];
      }
    }
    for (int t = 0; t < RT; ++t) {
      T* st = scores + t * P + jb;
#pragma omp simd
      for (Index l = 0; l < kLanes; ++l) {
        const T s = z * r[t][l];
        st[l] = s;
        const T masked = valid[jb + l] > T(0) ? s : std::numeric_limits<T>::lowest();
        mx[t][l] = masked > mx[t][l] ? masked : mx[t][l];
      }
    }
  }
  for (int t = 0; t < RT; ++t) {
    m[t] = mx[t][0];
    for (Index l = 1; l < kLanes; ++l) m[t] = mx[t][l] > m[t] ? mx[t][l] : m[t];
  }

  alignas(64) T total[RT][kLanes] = {};
  alignas(64) T acc[RT][W][kLanes] = {};
  for (Index jb = 0; jb < P; jb += kLanes) {
    alignas(64) T e[RT][kLanes];
    for (int t = 0; t < RT; ++t) {
      const T* st = scores + t * P + jb;
#pragma omp simd
      for (Index l = 0; l < kLanes; ++l) {
        e[t][l] = detail::exp_approx(st[l] - m[t]) * valid[jb + l];
        total[t][l] += e[t][l];
      }
    }
    for (Index d = 0; d < D; ++d) {
      const T* vd = V + d * P + jb;
      for (int t = 0; t < RT; ++t) {
#pragma omp simd
        for (Index l = 0; l < kLanes; ++l) acc[t][d][l] += e[t][l] * vd[l];
      }
    }
  }
  for (int t = 0; t < RT; ++t) {
    const T l = fold_lanes(total[t]);
    const T inv = T(1) / l;
    for (Index d = 0; d < D; ++d) out[t * D + d] = fold_lanes(acc[t][d]) * inv;
    m_out[t] = m[t];
    l_out[t] = l;
  }
}

// Gradient contributions of a tile of query rows; gk/gv are padded accumulators.
// Returns the tile's contribution to d(loss)/d(zeta).
template <typename T, int DK, int RT, bool Masked>
T backward_rows(const HeadSlice<T>& hs, const T* q, const T* go, const T* D_row, T z,
                const T* shift, T* gq_rows, T* gk, T* gv) {
  constexpr Index W = storage_width<DK>();
  const Index D = DK > 0 ? DK : hs.dk;
  const Index P = hs.padded;
  const T* K = hs.K.data();
  const T* V = hs.V.data();
  const T* valid = hs.valid.data();

  T zq[RT][W];
  for (int t = 0; t < RT; ++t)
    for (Index d = 0; d < D; ++d) zq[t][d] = z * q[t * D + d];
  alignas(64) T gqa[RT][W][kLanes] = {};
  alignas(64) T zeta_acc[kLanes] = {};

  for (Index jb = 0; jb < P; jb += kLanes) {
    alignas(64) T r[RT][kLanes] = {};
    alignas(64) T dp[RT][kLanes] = {};
    for (Index d = 0; d < D; ++d) {
      const T* kd = K + d * P + jb;
      const T* vd = V + d * P + jb;
      for (int t = 0; t < RT; ++t) {
        const T qd = q[t * D + d], god = go[t * D + d];
#pragma omp simd
        for (Index l = 0; l < kLanes; ++l) {
          r[t][l] += qd * kd[l];
          dp[t][l] += god * vd[l];
        }
      }
    }
    alignas(64) T p[RT][kLanes], ds[RT][kLanes];
    for (int t = 0; t < RT; ++t) {
#pragma omp simd
      for (Index l = 0; l < kLanes; ++l) {
        p[t][l] = detail::exp_approx(z * r[t][l] - shift[t]);
        if constexpr (Masked) p[t][l] *= valid[jb + l];
        ds[t][l] = p[t][l] * (dp[t][l] - D_row[t]);
        zeta_acc[l] += ds[t][l] * r[t][l];
      }
    }
    for (Index d = 0; d < D; ++d) {
      const T* kd = K + d * P + jb;
      T* gkd = gk + d * P + jb;
      T* gvd = gv + d * P + jb;
      alignas(64) T gk_blk[kLanes] = {};
      alignas(64) T gv_blk[kLanes] = {};
      for (int t = 0; t < RT; ++t) {
        const T c = zq[t][d], god = go[t * D + d];
#pragma omp simd
        for (Index l = 0; l < kLanes; ++l) {
          gqa[t][d][l] += ds[t][l] * kd[l];
          gk_blk[l] += c * ds[t][l];
          gv_blk[l] += god * p[t][l];
        }
      }
#pragma omp simd
      for (Index l = 0; l < kLanes; ++l) {
        gkd[l] += gk_blk[l];
        gvd[l] += gv_blk[l];
      }
    }
  }
  for (int t = 0; t < RT; ++t)
    for (Index d = 0; d < D; ++d) gq_rows[t * D + d] = z * fold_lanes(gqa[t][d]);
  return fold_lanes(zeta_acc);
}

template <typename T, int DK>
void forward_head(const AttnGeom& g, const T* Q, const T* K, const T* V, T z, T* O, T* row_max,
                  T* row_sum) {
  const HeadSlice<T> hs(K, V, g.dk, g.N);
  std::vector<T> scores(static_cast<std::size_t>(kRowTile * hs.padded));
  std::vector<T> q(static_cast<std::size_t>(kRowTile * g.dk)), o(q.size());
  Index i = 0;
  auto run = [&](auto tile) {
    constexpr int RT = decltype(tile)::value;
    for (int t = 0; t < RT; ++t)
      for (Index d = 0; d < g.dk; ++d) q[t * g.dk + d] = Q[d * g.N + i + t];
    if (hs.padded != g.N)
      forward_rows<T, DK, RT, true>(hs, q.data(), z, scores.data(), o.data(), row_max + i,
                                    row_sum + i);
    else
      forward_rows<T, DK, RT, false>(hs, q.data(), z, scores.data(), o.data(), row_max + i,
                                     row_sum + i);
    for (int t = 0; t < RT; ++t)
      for (Index d = 0; d < g.dk; ++d) O[d * g.N + i + t] = o[t * g.dk + d];
    i += RT;
  };
  while (i + kRowTile <= g.N) run(std::integral_constant<int, kRowTile>{});
  while (i < g.N) run(std::integral_constant<int, 1>{});
}

template <typename T, int DK>
T backward_head(const AttnGeom& g, const T* Q, const T* K, const T* V, const T* O, const T* dO,
                T z, const T* row_max, const T* row_sum, T* gq, T* gk, T* gv) {
  const HeadSlice<T> hs(K, V, g.dk, g.N);
  const Index P = hs.padded;
  std::vector<T> gk_pad(static_cast<std::size_t>(g.dk * P), T(0)),
      gv_pad(static_cast<std::size_t>(g.dk * P), T(0));
  const std::size_t tile = static_cast<std::size_t>(kBackwardRowTile * g.dk);
  std::vector<T> q(tile), go(tile), gq_rows(tile);
  const bool masked = P != g.N;
  T D_row[kBackwardRowTile], shift[kBackwardRowTile];
  T zeta_grad = 0;
  Index i = 0;
  auto run = [&](auto tile_rows) {
    constexpr int RT = decltype(tile_rows)::value;
    for (int t = 0; t < RT; ++t) {
      D_row[t] = 0;
      for (Index d = 0; d < g.dk; ++d) {
        q[t * g.dk + d] = Q[d * g.N + i + t];
        go[t * g.dk + d] = dO[d * g.N + i + t];
        D_row[t] += go[t * g.dk + d] * O[d * g.N + i + t];
      }
      // p = exp(s - m) / l folded into one shift.
      shift[t] = row_max[i + t] + std::log(row_sum[i + t]);
    }
    if (masked)
      zeta_grad += backward_rows<T, DK, RT, true>(hs, q.data(), go.data(), D_row, z, shift,
                                                  gq_rows.data(), gk_pad.data(), gv_pad.data());
    else
      zeta_grad += backward_rows<T, DK, RT, false>(hs, q.data(), go.data(), D_row, z, shift,
                                                   gq_rows.data(), gk_pad.data(), gv_pad.data());
    if (gq)
      for (int t = 0; t < RT; ++t)
        for (Index d = 0; d < g.dk; ++d) gq[d * g.N + i + t] += gq_rows[t * g.dk + d];
    i += RT;
  };
  while (i + kBackwardRowTile <= g.N) run(std::integral_constant<int, kBackwardRowTile>{});
  while (i < g.N) run(std::integral_constant<int, 1>{});
  for (Index d = 0; d < g.dk; ++d)
    for (Index j = 0; j < g.N; ++j) {
      if (gk) gk[d * g.N + j] += gk_pad[static_cast<std::size_t>(d * P + j)];
      if (gv) gv[d * g.N + j] += gv_pad[static_cast<std::size_t>(d * P + j)];
    }
  return zeta_grad;
}

// Dispatches to a kernel specialized for common head widths.
template <typename T, typename Fn>
auto with_head_width(Index dk, Fn&& fn) {
  switch (dk) {
    case 1: return fn(std::integral_constant<int, 1>{});
    case 2: return fn(std::integral_constant<int, 2>{});
    case 4: return fn(std::integral_constant<int, 4>{});
    case 8: return fn(std::integral_constant<int, 8>{});
    case 16: return fn(std::integral_constant<int, 16>{});
    case 32: return fn(std::integral_constant<int, 32>{});
    default: return fn(std::integral_constant<int, 0>{});
  }
}

}  // namespace

template <typename T>
Var<T> dmsa_core(const Var<T>& qa, const Var<T>& kb, const Var<T>& va, const Var<T>& zeta) {
  const AttnGeom g = attn_geometry("dmsa_core", qa.value(), kb.value(), va.value(), zeta.value());
  Tensor<T> row_max({g.B, g.heads, g.N});
  Tensor<T> row_sum({g.B, g.heads, g.N});
  Tensor<T> out(qa.shape());
  for (Index b = 0; b < g.B; ++b)
    for (Index h = 0; h < g.heads; ++h) {
      const Index base = (b * g.C + h * g.dk) * g.N;
      const Index stat = (b * g.heads + h) * g.N;
      with_head_width<T>(g.dk, [&](auto width) {
        forward_head<T, decltype(width)::value>(
            g, qa.value().data() + base, kb.value().data() + base, va.value().data() + base,
            zeta.value()[h], out.data() + base, row_max.data() + stat, row_sum.data() + stat);
        return 0;
      });
    }
  Tensor<T> saved_out = out;
  return qa.tape().record(
      "dmsa_core", std::move(out), {qa, kb, va, zeta},
      [qa, kb, va, zeta, g, row_max = std::move(row_max), row_sum = std::move(row_sum),
       saved_out = std::move(saved_out)](Tape<T>& tape, const Tensor<T>& gy) {
        Tensor<T>* gq = tape.grad_sink(qa);
        Tensor<T>* gk = tape.grad_sink(kb);
        Tensor<T>* gv = tape.grad_sink(va);
        Tensor<T>* gz = tape.grad_sink(zeta);
        std::vector<T> zeta_partial(static_cast<std::size_t>(g.B * g.heads), T(0));
        for (Index b = 0; b < g.B; ++b)
          for (Index h = 0; h < g.heads; ++h) {
            const Index base = (b * g.C + h * g.dk) * g.N;
            const Index stat = (b * g.heads + h) * g.N;
            zeta_partial[static_cast<std::size_t>(b * g.heads + h)] =
                with_head_width<T>(g.dk, [&](auto width) {
                  return backward_head<T, decltype(width)::value>(
                      g, qa.value().data() + base, kb.value().data() + base,
                      va.value().data() + base, saved_out.data() + base, gy.data() + base,
                      zeta.value()[h], row_max.data() + stat, row_sum.data() + stat,
                      gq ? gq->data() + base : nullptr, gk ? gk->data() + base : nullptr,
                      gv ? gv->data() + base : nullptr);
                });
          }
        if (gz)
          for (Index b = 0; b < g.B; ++b)
            for (Index h = 0; h < g.heads; ++h)
              (*gz)[h] += zeta_partial[static_cast<std::size_t>(b * g.heads + h)];
      });
}

template <typename T>
Tensor<T> attention_map(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& zeta) {
  const AttnGeom g = attn_geometry("attention_map", q, k, k, zeta);
  Tensor<T> out({g.B, g.heads, g.N, g.N});
  std::vector<T> r(static_cast<std::size_t>(g.N));
  for (Index b = 0; b < g.B; ++b)
    for (Index h = 0; h < g.heads; ++h) {
      const Index base = (b * g.C + h * g.dk) * g.N;
      for (Index i = 0; i < g.N; ++i) {
        T* row = out.data() + ((b * g.heads + h) * g.N + i) * g.N;
        raw_scores(q.data() + base, k.data() + base, g.dk, g.N, i, r.data());
        T m, l;
        softmax_row(r.data(), zeta[h], g.N, row, m, l);
        for (Index j = 0; j < g.N; ++j) row[j] /= l;
      }
    }
  return out;
}

template <typename T>
Var<T> mhsa_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads) {
  if (q.shape().size() != 4) throw DimensionError("mhsa_attention", "rank", 4, q.shape().size());
  if (k.shape() != q.shape() || v.shape() != q.shape())
    throw DimensionError("mhsa_attention", "q, k, v shapes differ");
  const Index B = q.dim(0), C = q.dim(1), N = q.dim(2) * q.dim(3);
  if (heads < 1 || C % heads != 0) throw DimensionError("mhsa_attention", "heads", C, heads);
  const Index dk = C / heads;
  const Shape split{B, heads, dk, N};
  const Var<T> qt = scale(transpose_last2(reshape(q, split)), T(1) / std::sqrt(static_cast<T>(dk)));
  const Var<T> scores = matmul_batched(qt, reshape(k, split));  // [B,h,N,N]
  const Var<T> weights = softmax_lastdim(scores);
  const Var<T> out_t = matmul_batched(weights, transpose_last2(reshape(v, split)));  // [B,h,N,dk]
  return reshape(transpose_last2(out_t), q.shape());
}

template <typename T>
Var<T> mhsa(const Var<T>& x, const AttnParams<T>& p) {
  if (x.shape().size() != 4 || x.dim(1) != p.channels)
    throw DimensionError("mhsa", "C", p.channels, x.shape().size() == 4 ? x.dim(1) : -1);
  const Var<T> att = mhsa_attention(project(x, p.q_w, p.q_b), project(x, p.k_w, p.k_b),
                                    project(x, p.v_w, p.v_b), p.heads);
  return project(att, p.o_w, p.o_b);
}

namespace {

template <typename T>
Var<T> normed(const Var<T>& x, const AttnParams<T>& p, const BlockOptions& opt) {
  if (!opt.layer_norm) return x;
  if (!p.norm_gain || !p.norm_bias)
    throw ConfigError("layer norm requested but the block was built without norm parameters");
  Tape<T>& tape = x.tape();
  return channel_layer_norm(x, tape.param(*p.norm_gain), tape.param(*p.norm_bias));
}

}  // namespace

template <typename T>
FeaturePair<T> dmsa_block(const FeaturePair<T>& pair, const AttnParams<T>& p,
                          const AttnParams<T>& q, const BlockOptions& opt) {
  check_pair("dmsa_block", pair);
  if (pair.visual.dim(1) != p.channels)
    throw DimensionError("dmsa_block", "C", p.channels, pair.visual.dim(1));
  if (q.channels != p.channels) throw DimensionError("dmsa_block", "C", p.channels, q.channels);
  Tape<T>& tape = pair.visual.tape();
  const Var<T> a = normed(pair.visual, p, opt);
  const Var<T> b = normed(pair.semantic, q, opt);
  if (!opt.crossed_keys) return {mhsa(a, p), mhsa(b, q)};
  const Var<T> qa = project(a, p.q_w, p.q_b), ka = project(a, p.k_w, p.k_b),
               va = project(a, p.v_w, p.v_b);
  const Var<T> qb = project(b, q.q_w, q.q_b), kb = project(b, q.k_w, q.k_b),
               vb = project(b, q.v_w, q.v_b);
  if (!p.zeta || !q.zeta) throw ConfigError("dmsa_block: attention parameters lack zeta");
  Var<T> att_a = dmsa_core(qa, kb, va, tape.param(*p.zeta));
  Var<T> att_b = dmsa_core(qb, ka, vb, tape.param(*q.zeta));
  if (opt.posemb) {
    if (!p.pos_w || !q.pos_w)
      throw ConfigError("dmsa_block: position embedding requested but not built");
    const Conv2dOptions dw{.stride = 1, .pad = 1, .groups = p.channels};
    att_a = add(att_a, conv2d(va, tape.param(*p.pos_w), Var<T>{}, dw));
    att_b = add(att_b, conv2d(vb, tape.param(*q.pos_w), Var<T>{}, dw));
  }
  return {project(att_a, p.o_w, p.o_b), project(att_b, q.o_w, q.o_b)};
}

template <typename T>
CrossScaleParams<T> CrossScaleParams<T>::create(ParamStore<T>& store, const std::string& prefix,
                                                Index channels, Index heads, Rng& rng,
                                                typename AttnParams<T>::Layout layout) {
  if (channels % 2 != 0)
    throw ConfigError(prefix + ": channel count must be even for the trailing resample");
  CrossScaleParams cp;
  cp.channels = channels;
  cp.inner_visual_res = AttnParams<T>::create(store, prefix + ".inner_v.res", channels, heads, rng, layout);
  cp.inner_visual_mid = AttnParams<T>::create(store, prefix + ".inner_v.mid", channels, heads, rng, layout);
  cp.inner_semantic_res = AttnParams<T>::create(store, prefix + ".inner_s.res", channels, heads, rng, layout);
  cp.inner_semantic_mid = AttnParams<T>::create(store, prefix + ".inner_s.mid", channels, heads, rng, layout);
  cp.fuse_w_visual = &store.add(prefix + ".fuse_v_w",
                                kaiming_uniform<T>({channels, 2 * channels, 1, 1}, 2 * channels, rng));
  cp.fuse_b_visual = &store.add(prefix + ".fuse_v_b", Tensor<T>({channels}));
  cp.fuse_w_semantic = &store.add(prefix + ".fuse_s_w",
                                  kaiming_uniform<T>({channels, 2 * channels, 1, 1}, 2 * channels, rng));
  cp.fuse_b_semantic = &store.add(prefix + ".fuse_s_b", Tensor<T>({channels}));
  cp.outer_visual = AttnParams<T>::create(store, prefix + ".outer_v", channels, heads, rng, layout);
  cp.outer_semantic = AttnParams<T>::create(store, prefix + ".outer_s", channels, heads, rng, layout);
  cp.up_w_visual = &store.add(prefix + ".up_v_w",
                              kaiming_uniform<T>({channels / 2, channels, 1, 1}, channels, rng));
  cp.up_b_visual = &store.add(prefix + ".up_v_b", Tensor<T>({channels / 2}));
  cp.up_w_semantic = &store.add(prefix + ".up_s_w",
                                kaiming_uniform<T>({channels / 2, channels, 1, 1}, channels, rng));
  cp.up_b_semantic = &store.add(prefix + ".up_s_b", Tensor<T>({channels / 2}));
  return cp;
}

template <typename T>
ResidualInteraction<T> csdmsa_interact(const FeaturePair<T>& mid, const FeaturePair<T>& res,
                                       const CrossScaleParams<T>& cp,
                                       const CrossScaleOptions& opt) {
  check_pair("csdmsa", mid);
  check_pair("csdmsa", res);
  if (mid.visual.shape() != res.visual.shape())
    throw DimensionError("csdmsa", "mid " + to_string(mid.visual.shape()) + " and residual " +
                                       to_string(res.visual.shape()) + " are at different scales");
  return {dmsa_block<T>({res.visual, mid.visual}, cp.inner_visual_res, cp.inner_visual_mid, opt.block),
          dmsa_block<T>({res.semantic, mid.semantic}, cp.inner_semantic_res, cp.inner_semantic_mid,
                        opt.block)};
}

template <typename T>
FeaturePair<T> csdmsa_fuse(const ResidualInteraction<T>& inter, const FeaturePair<T>& mid,
                           const CrossScaleParams<T>& cp, const CrossScaleOptions& opt) {
  Tape<T>& tape = mid.visual.tape();
  const Var<T>& mid_v = opt.use_primed_mid ? inter.visual.semantic : mid.visual;
  const Var<T>& mid_s = opt.use_primed_mid ? inter.semantic.semantic : mid.semantic;
  return {conv2d(concat_channels(inter.visual.visual, mid_v), tape.param(*cp.fuse_w_visual),
                 tape.param(*cp.fuse_b_visual)),
          conv2d(concat_channels(inter.semantic.visual, mid_s), tape.param(*cp.fuse_w_semantic),
                 tape.param(*cp.fuse_b_semantic))};
}

template <typename T>
FeaturePair<T> csdmsa_output(const FeaturePair<T>& agg, const CrossScaleParams<T>& cp,
                             const CrossScaleOptions& opt) {
  Tape<T>& tape = agg.visual.tape();
  const FeaturePair<T> mixed = dmsa_block(agg, cp.outer_visual, cp.outer_semantic, opt.block);
  return {resample_up(mixed.visual, tape.param(*cp.up_w_visual), tape.param(*cp.up_b_visual)),
          resample_up(mixed.semantic, tape.param(*cp.up_w_semantic),
                      tape.param(*cp.up_b_semantic))};
}

template <typename T>
FeaturePair<T> csdmsa(const FeaturePair<T>& mid, const FeaturePair<T>& res,
                      const CrossScaleParams<T>& cp, const CrossScaleOptions& opt) {
  const ResidualInteraction<T> inter = csdmsa_interact(mid, res, cp, opt);
  return csdmsa_output(csdmsa_fuse(inter, mid, cp, opt), cp, opt);
}

#define ECAF_INSTANTIATE(T)                                                                       \
  template void check_pair(const char*, const FeaturePair<T>&);                                   \
  template struct AttnParams<T>;                                                                  \
  template struct CrossScaleParams<T>;                                                            \
  template Var<T> dmsa_core(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);          \
  template Var<T> mhsa_attention(const Var<T>&, const Var<T>&, const Var<T>&, Index);             \
  template Tensor<T> attention_map(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Var<T> mhsa(const Var<T>&, const AttnParams<T>&);                                      \
  template FeaturePair<T> dmsa_block(const FeaturePair<T>&, const AttnParams<T>&,                 \
                                     const AttnParams<T>&, const BlockOptions&);                  \
  template ResidualInteraction<T> csdmsa_interact(const FeaturePair<T>&, const FeaturePair<T>&,   \
                                                  const CrossScaleParams<T>&,                     \
                                                  const CrossScaleOptions&);                      \
  template FeaturePair<T> csdmsa_fuse(const ResidualInteraction<T>&, const FeaturePair<T>&,       \
                                      const CrossScaleParams<T>&, const CrossScaleOptions&);      \
  template FeaturePair<T> csdmsa_output(const FeaturePair<T>&, const CrossScaleParams<T>&,        \
                                        const CrossScaleOptions&);                                \
  template FeaturePair<T> csdmsa(const FeaturePair<T>&, const FeaturePair<T>&,                    \
                                 const CrossScaleParams<T>&, const CrossScaleOptions&);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
