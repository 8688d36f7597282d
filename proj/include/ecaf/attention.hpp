// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "ecaf/autodiff.hpp"
#include "ecaf/param_store.hpp"
#include "ecaf/rng.hpp"

namespace ecaf {

/// Visual / semantic streams. Both halves always share a shape.
template <typename T>
struct FeaturePair {
  Var<T> visual;
  Var<T> semantic;
};

template <typename T>
void check_pair(const char* op, const FeaturePair<T>& pair);

/// Learnable weights of one attention stream: 1x1 Q/K/V/output projections,
/// one scale per head (zeta, starts at 1/sqrt(d_k)), and a depthwise 3x3
/// position embedding applied to V.
template <typename T>
struct AttnParams {
  Index channels = 0;
  Index heads = 1;
  Parameter<T>* q_w = nullptr;
  Parameter<T>* q_b = nullptr;
  Parameter<T>* k_w = nullptr;
  Parameter<T>* k_b = nullptr;
  Parameter<T>* v_w = nullptr;
  Parameter<T>* v_b = nullptr;
  Parameter<T>* o_w = nullptr;
  Parameter<T>* o_b = nullptr;
  Parameter<T>* zeta = nullptr;
  Parameter<T>* pos_w = nullptr;
  Parameter<T>* norm_gain = nullptr;
  Parameter<T>* norm_bias = nullptr;

  Index head_dim() const { return channels / heads; }

  struct Layout {
    bool zeta = true;
    bool posemb = true;
    bool norm = false;
  };

  /// Registers parameters named `<prefix>.q_w` etc. Throws ConfigError when
  /// channels is not divisible by heads.
  static AttnParams create(ParamStore<T>& store, const std::string& prefix, Index channels,
                           Index heads, Rng& rng, Layout layout);
  static AttnParams create(ParamStore<T>& store, const std::string& prefix, Index channels,
                           Index heads, Rng& rng) {
    return create(store, prefix, channels, heads, rng, Layout{});
  }
};

struct BlockOptions {
  bool posemb = true;
  bool layer_norm = false;
  /// When false each stream runs plain mhsa on its own keys (no zeta, no PosEmb).
  bool crossed_keys = true;
};

/// softmax(Q K^T * zeta_h) V per head, with tokens = the H*W positions and heads
/// splitting the channel axis. q, k, v: [B,C,H,W]; zeta: [heads].
template <typename T>
Var<T> dmsa_core(const Var<T>& qa, const Var<T>& kb, const Var<T>& va, const Var<T>& zeta);

/// softmax(Q K^T / sqrt(d_k)) V assembled from matmul_batched and softmax_lastdim.
template <typename T>
Var<T> mhsa_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, Index heads);

/// Row-stochastic attention weights [B,heads,N,N] that dmsa_core would apply.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& zeta);

/// Self-attention over one stream (no key crossing, no position embedding),
/// followed by the output projection.
template <typename T>
Var<T> mhsa(const Var<T>& x, const AttnParams<T>& p);

/// alpha' = out_p(dmsa_core(Q_a, K_b, V_a) + PosEmb(V_a)), beta' symmetric
/// with keys crossed the other way. p drives the visual stream, q the semantic.
template <typename T>
FeaturePair<T> dmsa_block(const FeaturePair<T>& pair, const AttnParams<T>& p,
                          const AttnParams<T>& q, const BlockOptions& opt = {});

template <typename T>
struct CrossScaleParams {
  Index channels = 0;
  AttnParams<T> inner_visual_res;
  AttnParams<T> inner_visual_mid;
  AttnParams<T> inner_semantic_res;
  AttnParams<T> inner_semantic_mid;
  Parameter<T>* fuse_w_visual = nullptr;  // [C, 2C, 1, 1]
  Parameter<T>* fuse_b_visual = nullptr;
  Parameter<T>* fuse_w_semantic = nullptr;
  Parameter<T>* fuse_b_semantic = nullptr;
  AttnParams<T> outer_visual;
  AttnParams<T> outer_semantic;
  Parameter<T>* up_w_visual = nullptr;  // [C/2, C, 1, 1]
  Parameter<T>* up_b_visual = nullptr;
  Parameter<T>* up_w_semantic = nullptr;
  Parameter<T>* up_b_semantic = nullptr;

  static CrossScaleParams create(ParamStore<T>& store, const std::string& prefix, Index channels,
                                 Index heads, Rng& rng,
                                 typename AttnParams<T>::Layout layout = {});
};

struct CrossScaleOptions {
  BlockOptions block;
  /// Fuse the attended mid feature instead of the raw one.
  bool use_primed_mid = false;
};

/// Residual/mid interaction per stream: returns {res', mid'} for each stream.
template <typename T>
struct ResidualInteraction {
  FeaturePair<T> visual;    // {res', mid'} of the visual stream
  FeaturePair<T> semantic;  // {res', mid'} of the semantic stream
};

template <typename T>
ResidualInteraction<T> csdmsa_interact(const FeaturePair<T>& mid, const FeaturePair<T>& res,
                                       const CrossScaleParams<T>& cp,
                                       const CrossScaleOptions& opt = {});

/// agg = W * concat(res', mid) + B per stream.
template <typename T>
FeaturePair<T> csdmsa_fuse(const ResidualInteraction<T>& inter, const FeaturePair<T>& mid,
                           const CrossScaleParams<T>& cp, const CrossScaleOptions& opt = {});

/// resample_up(dmsa_block(agg)): output at twice the spatial extent, half the channels.
template <typename T>
FeaturePair<T> csdmsa_output(const FeaturePair<T>& agg, const CrossScaleParams<T>& cp,
                             const CrossScaleOptions& opt = {});

template <typename T>
FeaturePair<T> csdmsa(const FeaturePair<T>& mid, const FeaturePair<T>& res,
                      const CrossScaleParams<T>& cp, const CrossScaleOptions& opt = {});

}  // namespace ecaf
