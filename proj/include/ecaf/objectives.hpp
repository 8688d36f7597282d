// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecaf/autodiff.hpp"
#include "ecaf/checkpoint.hpp"

namespace ecaf {

enum class Reduction { sum, mean };

struct LossWeights {
  /// Weight of the perceptual term; the pixel term gets 1 - lambda.
  double lambda = 0.2;
  double epsilon = 1e-3;
  Reduction pixel_reduction = Reduction::sum;
  /// Replace the composite objective by plain L1 (ablation).
  bool l1_only = false;

  void validate() const;
};

/// sum (or mean) of sqrt((pred - ref)^2 + eps^2). Accumulated with compensated
/// summation, so identical inputs give exactly n * eps.
template <typename T>
Var<T> charbonnier(const Var<T>& pred, const Var<T>& ref, T eps,
                   Reduction reduction = Reduction::sum);

/// sum (or mean) of |pred - ref|; the subgradient at 0 is 0.
template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& ref, Reduction reduction = Reduction::sum);

/// Frozen five-stage ReLU feature extractor used by the perceptual loss.
/// Stage 1 is a 3x3 conv (stride 1); stages 2-5 are 4x4 stride-2 convs.
/// Channels 3 -> 8 -> 16 -> 16 -> 32 -> 32.
template <typename T>
class FeatureNet {
 public:
  static constexpr int kStages = 5;
  static constexpr std::array<Index, kStages + 1> kChannels{3, 8, 16, 16, 32, 32};
  /// Spatial extents are zero-padded up to a multiple of this before extraction.
  static constexpr Index kSpatialMultiple = 16;
  static constexpr Index kMinExtent = 32;
  static constexpr std::uint64_t kDefaultSeed = 20240917;

  explicit FeatureNet(std::uint64_t seed = kDefaultSeed);

  /// Loads weights named feature.w1..w5 / feature.b1..b5 (shapes must match).
  static FeatureNet from_checkpoint(const Checkpoint& ck);
  Checkpoint to_checkpoint() const;

  /// Post-ReLU outputs of all five stages. Weights enter the tape as constant
  /// leaves; their handles are appended to `weight_vars` when given.
  std::vector<Var<T>> features(const Var<T>& img, std::vector<Var<T>>* weight_vars = nullptr) const;

  const std::vector<Tensor<T>>& weights() const noexcept { return weights_; }
  const std::vector<Tensor<T>>& biases() const noexcept { return biases_; }

 private:
  FeatureNet(std::vector<Tensor<T>> w, std::vector<Tensor<T>> b)
      : weights_(std::move(w)), biases_(std::move(b)) {}

  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

/// Sum over stages of the per-stage mean squared feature difference.
/// H and W must be at least 32. Gradients reach `pred` (and `ref` if it requires them).
template <typename T>
Var<T> perceptual(const Var<T>& pred, const Var<T>& ref, const FeatureNet<T>& net,
                  std::vector<Var<T>>* weight_vars = nullptr);

template <typename T>
struct LossTerms {
  Var<T> total;
  /// Invalid under l1_only.
  Var<T> perceptual;
  /// Charbonnier, or L1 under l1_only.
  Var<T> pixel;
};

/// lambda * L_p + (1 - lambda) * L_c.
template <typename T>
LossTerms<T> total_loss(const Var<T>& pred, const Var<T>& ref, const LossWeights& w,
                        const FeatureNet<T>& net);

/// 10 log10(1 / MSE) for unit data range; identical inputs give kPsnrCap.
inline constexpr double kPsnrCap = 99.0;
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& ref);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, valid region only, averaged over channels (and batch).
/// Accepts [C,H,W] or [B,C,H,W].
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& ref);

struct MetricsRecord {
  Index iter = 0;
  double psnr_db = 0;
  double ssim = 0;
  double loss_total = 0;
  double loss_p = 0;
  double loss_c = 0;
  double lr = 0;
};

/// One JSON object on one line, without the trailing newline.
std::string to_json_line(const MetricsRecord& r);

}  // namespace ecaf
