// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ecaf/attention.hpp"
#include "ecaf/checkpoint.hpp"

namespace ecaf {

enum class AttentionKind { dmsa, mhsa };

/// Architecture hyperparameters. Defaults are the desk-scale configuration.
struct ModelConfig {
  Index base_channels = 8;
  /// Heads at each scale 0..stages.
  std::vector<Index> heads = {2, 2, 2};
  Index stages = 2;
  Index bottleneck_blocks = 2;
  Index input_channels = 3;
  bool posemb = true;
  bool layer_norm = false;
  /// Visual-semantic split; when off the first conv's output feeds both streams.
  bool vsf = true;
  AttentionKind attention = AttentionKind::dmsa;
  bool use_primed_mid = false;
  bool zero_init_output = true;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending key.
  void validate() const;
  Index channels_at(Index scale) const { return base_channels << scale; }
  Index heads_at(Index scale) const;
  /// Smallest multiple the spatial extent is padded to.
  Index spatial_multiple() const { return Index{1} << stages; }

  using KeyValues = std::vector<std::pair<std::string, std::string>>;
  KeyValues to_key_values() const;
  /// Unknown keys are errors; missing keys keep their defaults.
  static ModelConfig from_key_values(const KeyValues& kv);
  /// Name of the first key whose value differs, if any.
  static std::optional<std::string> first_mismatch(const ModelConfig& a, const ModelConfig& b);
};

std::string to_string(AttentionKind kind);

template <typename T>
struct EncoderTaps {
  /// taps[0] is the extractor output; taps[s] the post-downsample pair of stage s.
  std::vector<FeaturePair<T>> taps;
};

/// The full enhancement network. Parameter handles point into the model's own
/// ParamStore, so a Model is movable but not copyable.
template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  Index parameter_count() const { return params_.count(); }

  /// f_v = Conv1(img); f_s = Conv2(f_v) with Conv2 two depthwise-separable layers.
  FeaturePair<T> extract_visual_semantic(const Var<T>& img) const;
  /// One down stage: attention on the pair, then resample_down per stream.
  /// Returns the next-stage pair, which is also the stage's residual tap.
  FeaturePair<T> encoder_stage(const FeaturePair<T>& pair, Index stage) const;
  EncoderTaps<T> encode(const FeaturePair<T>& extracted) const;
  FeaturePair<T> bottleneck(const FeaturePair<T>& pair) const;
  FeaturePair<T> decode(const FeaturePair<T>& deepest, const EncoderTaps<T>& taps) const;

  /// Differentiable forward of an image batch [B,C,H,W] with values in [0,1].
  /// Inputs outside [0,1] are clamped with a warning.
  Var<T> forward(Tape<T>& tape, const Tensor<T>& img) const;
  /// Inference convenience; accepts [C,H,W] or [B,C,H,W].
  Tensor<T> enhance(const Tensor<T>& img) const;

  /// Copies parameter values by name into a model of another precision.
  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (const auto& p : params_) out.params().get(p.name).value = p.value.template cast<U>();
    return out;
  }

 private:
  struct Extractor {
    Parameter<T>* conv_w = nullptr;
    Parameter<T>* conv_b = nullptr;
    Parameter<T>* ds1_dw = nullptr;
    Parameter<T>* ds1_pw = nullptr;
    Parameter<T>* ds1_b = nullptr;
    Parameter<T>* ds2_dw = nullptr;
    Parameter<T>* ds2_pw = nullptr;
    Parameter<T>* ds2_b = nullptr;
  };
  struct Stage {
    AttnParams<T> visual;
    AttnParams<T> semantic;
    Parameter<T>* down_w_visual = nullptr;
    Parameter<T>* down_b_visual = nullptr;
    Parameter<T>* down_w_semantic = nullptr;
    Parameter<T>* down_b_semantic = nullptr;
  };

  FeaturePair<T> attend(const FeaturePair<T>& pair, const AttnParams<T>& p,
                        const AttnParams<T>& q) const;
  void build();

  ModelConfig config_;
  ParamStore<T> params_;
  Extractor extractor_;
  std::vector<Stage> encoder_;
  std::vector<std::pair<AttnParams<T>, AttnParams<T>>> bottleneck_;
  /// decoder_[s-1] consumes taps[s].
  std::vector<CrossScaleParams<T>> decoder_;
  Parameter<T>* map_w_ = nullptr;
  Parameter<T>* map_b_ = nullptr;
};

/// Config plus every parameter (stored as float32).
template <typename T>
Checkpoint to_checkpoint(const Model<T>& model);

/// Rebuilds a model from a checkpoint. Tensors whose names start with "adam."
/// are optimizer state and ignored here; any other unknown or missing
/// parameter is a FormatError. When `expected` is given, a config mismatch
/// throws ConfigError naming the first mismatched key.
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ck, const ModelConfig* expected = nullptr);

template <typename T>
void save_model(const Model<T>& model, const std::string& path);

template <typename T>
Model<T> load_model(const std::string& path, const ModelConfig* expected = nullptr);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace ecaf
