// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ecaf/data_io.hpp"
#include "ecaf/network.hpp"
#include "ecaf/objectives.hpp"

namespace ecaf {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments for every parameter of a store, in store order.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  Index step = 0;

  explicit AdamState(const ParamStore<T>& params, AdamConfig cfg = {});
};

/// Bias-corrected Adam update in place, then zero_grad(). Throws ConfigError
/// naming any parameter that received no gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr);

struct Schedule {
  double lr_start = 2e-4;
  double lr_end = 1e-6;
  Index total_iters = 2000;

  void validate() const;
};

/// lr_end + (lr_start - lr_end)(1 + cos(pi t / T)) / 2; t = 0 gives lr_start
/// and t >= T gives lr_end exactly.
double cosine_lr(Index t, const Schedule& s);

/// The same random size x size window cut from both images of a pair.
ImagePair sample_patch(const Tensor<float>& low, const Tensor<float>& ref, Index size, Rng& rng);

/// Element k of the dihedral group on [C,H,W]: k % 4 quarter turns
/// counter-clockwise, then a horizontal flip when k >= 4.
Tensor<float> dihedral(const Tensor<float>& img, int k);
int dihedral_inverse(int k);

/// Applies one uniformly drawn dihedral transform to both halves.
ImagePair augment(const ImagePair& pair, Rng& rng);
/// Index of the transform augment() will draw from a copy of `rng`.
int draw_dihedral(Rng& rng);

struct TrainOptions {
  /// Target iteration count; a resumed run continues from the checkpoint up to this.
  Index iters = 2000;
  Index batch = 2;
  Index patch = 64;
  Schedule schedule;
  LossWeights weights;
  bool augment = true;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
  Index log_every = 50;
  Index ckpt_every = 500;
  std::uint64_t seed = 0;
  /// Empty: no files are written.
  std::string out_dir;
  /// Checkpoint to continue from; empty starts fresh.
  std::string resume_from;
  /// Pair index used for the periodic PSNR/SSIM evaluation.
  Index val_index = 0;
};

struct TrainReport {
  Index iter = 0;
  double loss_total = 0, loss_p = 0, loss_c = 0, lr = 0;
  double psnr_db = 0, ssim = 0;
  double wall_seconds = 0;
  /// Total loss of every iteration run in this call, in order.
  std::vector<double> loss_history;
  /// Path of the last checkpoint written, if any.
  std::string last_checkpoint;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs the optimization loop. Per-iteration randomness is derived from
/// (seed, iteration), so a resumed run reproduces an uninterrupted one.
template <typename T>
TrainReport train(Model<T>& model, const std::vector<ImagePair>& data, const TrainOptions& opt,
                  const FeatureNet<T>& net,
                  const std::function<void(const MetricsRecord&)>& on_log = {});

/// Checkpoint with model, optimizer moments and loop state.
template <typename T>
Checkpoint training_checkpoint(const Model<T>& model, const AdamState<T>& adam, Index iter,
                               const TrainOptions& opt);

inline constexpr const char* kTrainLogName = "train_log.jsonl";
inline constexpr const char* kFinalCheckpointName = "final.ecak";

}  // namespace ecaf
