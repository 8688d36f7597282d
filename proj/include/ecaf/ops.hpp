// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ecaf/autodiff.hpp"

namespace ecaf {

struct Conv2dOptions {
  Index stride = 1;
  Index pad = 0;
  Index groups = 1;
};

/// Cross-correlation with zero padding. x: [B,Cin,H,W], w: [Cout,Cin/groups,kh,kw],
/// b: [Cout] or an invalid Var for no bias. Output extent is
/// floor((H+2p-kh)/stride)+1; H and W must be multiples of the stride.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, Conv2dOptions opt = {});

/// Depthwise 3x3 (pad 1, groups = C, no bias) followed by a biased 1x1 conv.
template <typename T>
Var<T> depthwise_separable_conv(const Var<T>& x, const Var<T>& dw, const Var<T>& pw,
                                const Var<T>& b);

/// [..., m, k] x [..., k, n] -> [..., m, n]. Each output sums over k in increasing order.
template <typename T>
Var<T> matmul_batched(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> transpose_last2(const Var<T>& x);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Max-shifted softmax over the trailing axis.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x);

/// Stride-2, pad-1, 4x4 conv: [B,C,H,W] -> [B,2C,H/2,W/2]. H and W must be even.
template <typename T>
Var<T> resample_down(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x);

/// Nearest 2x duplication then a 1x1 conv: [B,C,H,W] -> [B,C/2,2H,2W]. C must be even.
template <typename T>
Var<T> resample_up(const Var<T>& x, const Var<T>& w, const Var<T>& b);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& c);

/// Channels [begin, end) of a [B,C,H,W] tensor.
template <typename T>
Var<T> slice_channels(const Var<T>& x, Index begin, Index end);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);
template <typename T>
Var<T> relu(const Var<T>& a);
/// Gradient passes where lo <= x <= hi.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi);

/// Zero-pads the bottom/right of [B,C,H,W] to [B,C,height,width].
template <typename T>
Var<T> pad_spatial(const Var<T>& x, Index height, Index width);
/// Top-left [B,C,height,width] window.
template <typename T>
Var<T> crop_spatial(const Var<T>& x, Index height, Index width);

/// Per-pixel normalization across channels with learnable gain/bias of length C.
template <typename T>
Var<T> channel_layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                          T eps = T(1e-5));

}  // namespace ecaf
