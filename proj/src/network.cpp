// SPDX-License-Identifier: Apache-2.0
#include "ecaf/network.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "ecaf/init.hpp"
#include "ecaf/log.hpp"
#include "ecaf/ops.hpp"

namespace ecaf {

// ---------------------------------------------------------------------------
// ModelConfig

Index ModelConfig::heads_at(Index scale) const {
  if (heads.empty()) throw ConfigError("heads: list is empty");
  const auto i = static_cast<std::size_t>(scale);
  return i < heads.size() ? heads[i] : heads.back();
}

void ModelConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (stages < 1 || stages > 6) throw ConfigError("stages must be in [1, 6]");
  if (bottleneck_blocks < 0) throw ConfigError("bottleneck_blocks must be >= 0");
  if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
  if (heads.empty()) throw ConfigError("heads: list is empty");
  for (Index s = 0; s <= stages; ++s) {
    const Index h = heads_at(s);
    if (h < 1 || channels_at(s) % h != 0)
      throw ConfigError("heads: " + std::to_string(channels_at(s)) + " channels at scale " +
                        std::to_string(s) + " are not divisible by " + std::to_string(h) +
                        " heads");
  }
}

std::string to_string(AttentionKind kind) {
  return kind == AttentionKind::dmsa ? "dmsa" : "mhsa";
}

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

std::vector<Index> parse_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<Index>(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace

ModelConfig::KeyValues ModelConfig::to_key_values() const {
  std::string head_list;
  for (std::size_t i = 0; i < heads.size(); ++i)
    head_list += (i ? "," : "") + std::to_string(heads[i]);
  return {{"base_channels", std::to_string(base_channels)},
          {"heads", head_list},
          {"stages", std::to_string(stages)},
          {"bottleneck_blocks", std::to_string(bottleneck_blocks)},
          {"input_channels", std::to_string(input_channels)},
          {"posemb", bool_text(posemb)},
          {"layer_norm", bool_text(layer_norm)},
          {"vsf", bool_text(vsf)},
          {"attention", to_string(attention)},
          {"use_primed_mid", bool_text(use_primed_mid)},
          {"zero_init_output", bool_text(zero_init_output)},
          {"seed", std::to_string(seed)}};
}

ModelConfig ModelConfig::from_key_values(const KeyValues& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "base_channels") c.base_channels = parse_int<Index>(k, v);
    else if (k == "heads") c.heads = parse_list(k, v);
    else if (k == "stages") c.stages = parse_int<Index>(k, v);
    else if (k == "bottleneck_blocks") c.bottleneck_blocks = parse_int<Index>(k, v);
    else if (k == "input_channels") c.input_channels = parse_int<Index>(k, v);
    else if (k == "posemb") c.posemb = parse_bool(k, v);
    else if (k == "layer_norm") c.layer_norm = parse_bool(k, v);
    else if (k == "vsf") c.vsf = parse_bool(k, v);
    else if (k == "attention") {
      if (v == "dmsa") c.attention = AttentionKind::dmsa;
      else if (v == "mhsa") c.attention = AttentionKind::mhsa;
      else throw ConfigError("attention: expected dmsa or mhsa, got '" + v + "'");
    } else if (k == "use_primed_mid") c.use_primed_mid = parse_bool(k, v);
    else if (k == "zero_init_output") c.zero_init_output = parse_bool(k, v);
    else if (k == "seed") c.seed = parse_int<std::uint64_t>(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  c.validate();
  return c;
}

std::optional<std::string> ModelConfig::first_mismatch(const ModelConfig& a, const ModelConfig& b) {
  const KeyValues ka = a.to_key_values(), kb = b.to_key_values();
  for (std::size_t i = 0; i < ka.size(); ++i)
    if (ka[i].second != kb[i].second) return ka[i].first;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  build();
}

template <typename T>
void Model<T>::build() {
  Rng rng = Rng(config_.seed).split("init");
  const Index c0 = config_.base_channels;
  const Index cin = config_.input_channels;
  auto add = [&](const std::string& name, Tensor<T> value) { return &params_.add(name, std::move(value)); };
  auto conv = [&](const std::string& name, Shape shape) {
    const Index fan_in = shape[1] * shape[2] * shape[3];
    return add(name, kaiming_uniform<T>(std::move(shape), fan_in, rng));
  };
  auto bias = [&](const std::string& name, Index n) { return add(name, Tensor<T>({n})); };

  extractor_.conv_w = conv("vsc.conv_w", {c0, cin, 3, 3});
  extractor_.conv_b = bias("vsc.conv_b", c0);
  if (config_.vsf) {
    extractor_.ds1_dw = conv("vsc.ds1_dw", {c0, 1, 3, 3});
    extractor_.ds1_pw = conv("vsc.ds1_pw", {c0, c0, 1, 1});
    extractor_.ds1_b = bias("vsc.ds1_b", c0);
    extractor_.ds2_dw = conv("vsc.ds2_dw", {c0, 1, 3, 3});
    extractor_.ds2_pw = conv("vsc.ds2_pw", {c0, c0, 1, 1});
    extractor_.ds2_b = bias("vsc.ds2_b", c0);
  }

  const bool dual = config_.attention == AttentionKind::dmsa;
  const typename AttnParams<T>::Layout layout{
      .zeta = dual, .posemb = dual && config_.posemb, .norm = config_.layer_norm};

  for (Index s = 0; s < config_.stages; ++s) {
    const Index c = config_.channels_at(s), h = config_.heads_at(s);
    const std::string prefix = "enc" + std::to_string(s + 1);
    Stage stage;
    stage.visual = AttnParams<T>::create(params_, prefix + ".v", c, h, rng, layout);
    stage.semantic = AttnParams<T>::create(params_, prefix + ".s", c, h, rng, layout);
    stage.down_w_visual = conv(prefix + ".down_v_w", {2 * c, c, 4, 4});
    stage.down_b_visual = bias(prefix + ".down_v_b", 2 * c);
    stage.down_w_semantic = conv(prefix + ".down_s_w", {2 * c, c, 4, 4});
    stage.down_b_semantic = bias(prefix + ".down_s_b", 2 * c);
    encoder_.push_back(stage);
  }

  const Index deep_c = config_.channels_at(config_.stages);
  const Index deep_h = config_.heads_at(config_.stages);
  for (Index j = 0; j < config_.bottleneck_blocks; ++j) {
    const std::string prefix = "bottleneck" + std::to_string(j + 1);
    bottleneck_.emplace_back(
        AttnParams<T>::create(params_, prefix + ".v", deep_c, deep_h, rng, layout),
        AttnParams<T>::create(params_, prefix + ".s", deep_c, deep_h, rng, layout));
  }

  decoder_.resize(static_cast<std::size_t>(config_.stages));
  for (Index s = config_.stages; s >= 1; --s)
    decoder_[static_cast<std::size_t>(s - 1)] = CrossScaleParams<T>::create(
        params_, "dec" + std::to_string(s), config_.channels_at(s), config_.heads_at(s), rng,
        layout);

  if (config_.zero_init_output)
    map_w_ = add("map_w", Tensor<T>({cin, 2 * c0, 3, 3}));
  else
    map_w_ = conv("map_w", {cin, 2 * c0, 3, 3});
  map_b_ = bias("map_b", cin);
}

namespace {

BlockOptions block_options(const ModelConfig& c) {
  return {.posemb = c.posemb && c.attention == AttentionKind::dmsa,
          .layer_norm = c.layer_norm,
          .crossed_keys = c.attention == AttentionKind::dmsa};
}

}  // namespace

template <typename T>
FeaturePair<T> Model<T>::extract_visual_semantic(const Var<T>& img) const {
  if (img.shape().size() != 4) throw DimensionError("extract_visual_semantic", "rank", 4, img.shape().size());
  if (img.dim(1) != config_.input_channels)
    throw ConfigError("extract_visual_semantic: image has " + std::to_string(img.dim(1)) +
                      " channels, model expects " + std::to_string(config_.input_channels));
  Tape<T>& tape = img.tape();
  const Extractor& e = extractor_;
  const Var<T> visual = conv2d(img, tape.param(*e.conv_w), tape.param(*e.conv_b), {.pad = 1});
  if (!config_.vsf) return {visual, visual};
  const Var<T> mid = depthwise_separable_conv(visual, tape.param(*e.ds1_dw), tape.param(*e.ds1_pw),
                                              tape.param(*e.ds1_b));
  const Var<T> semantic = depthwise_separable_conv(mid, tape.param(*e.ds2_dw),
                                                   tape.param(*e.ds2_pw), tape.param(*e.ds2_b));
  return {visual, semantic};
}

template <typename T>
FeaturePair<T> Model<T>::attend(const FeaturePair<T>& pair, const AttnParams<T>& p,
                                const AttnParams<T>& q) const {
  return dmsa_block(pair, p, q, block_options(config_));
}

template <typename T>
FeaturePair<T> Model<T>::encoder_stage(const FeaturePair<T>& pair, Index stage) const {
  if (stage < 0 || stage >= config_.stages)
    throw ConfigError("encoder_stage: stage " + std::to_string(stage) + " out of range");
  const Stage& st = encoder_[static_cast<std::size_t>(stage)];
  const FeaturePair<T> mixed = attend(pair, st.visual, st.semantic);
  Tape<T>& tape = pair.visual.tape();
  return {resample_down(mixed.visual, tape.param(*st.down_w_visual), tape.param(*st.down_b_visual)),
          resample_down(mixed.semantic, tape.param(*st.down_w_semantic),
                        tape.param(*st.down_b_semantic))};
}

template <typename T>
EncoderTaps<T> Model<T>::encode(const FeaturePair<T>& extracted) const {
  EncoderTaps<T> out;
  out.taps.push_back(extracted);
  for (Index s = 0; s < config_.stages; ++s) out.taps.push_back(encoder_stage(out.taps.back(), s));
  return out;
}

template <typename T>
FeaturePair<T> Model<T>::bottleneck(const FeaturePair<T>& pair) const {
  FeaturePair<T> cur = pair;
  for (const auto& [p, q] : bottleneck_) cur = attend(cur, p, q);
  return cur;
}

template <typename T>
FeaturePair<T> Model<T>::decode(const FeaturePair<T>& deepest, const EncoderTaps<T>& taps) const {
  if (static_cast<Index>(taps.taps.size()) != config_.stages + 1)
    throw ConfigError("decode: expected " + std::to_string(config_.stages + 1) + " taps");
  const CrossScaleOptions opt{.block = block_options(config_),
                              .use_primed_mid = config_.use_primed_mid};
  FeaturePair<T> cur = deepest;
  for (Index s = config_.stages; s >= 1; --s)
    cur = csdmsa(cur, taps.taps[static_cast<std::size_t>(s)],
                 decoder_[static_cast<std::size_t>(s - 1)], opt);
  return cur;
}

template <typename T>
Var<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& img) const {
  if (img.rank() != 4) throw DimensionError("forward", "rank", 4, img.rank());
  if (img.dim(1) != config_.input_channels)
    throw DimensionError("forward", "C", config_.input_channels, img.dim(1));
  const Index H = img.dim(2), W = img.dim(3);
  const Index multiple = config_.spatial_multiple();
  if (H < 2 * multiple) throw DimensionError("forward", "H", 2 * multiple, H);
  if (W < 2 * multiple) throw DimensionError("forward", "W", 2 * multiple, W);

  Tensor<T> input = img;
  bool out_of_range = false;
  for (auto& v : input.values()) {
    if (v < T(0) || v > T(1)) {
      out_of_range = true;
      v = std::clamp(v, T(0), T(1));
    }
  }
  if (out_of_range) warn("forward: input values outside [0,1] were clamped");

  const Var<T> x = tape.leaf(std::move(input));
  const Index Hp = (H + multiple - 1) / multiple * multiple;
  const Index Wp = (W + multiple - 1) / multiple * multiple;
  const Var<T> padded = (Hp == H && Wp == W) ? x : pad_spatial(x, Hp, Wp);

  const EncoderTaps<T> taps = encode(extract_visual_semantic(padded));
  const FeaturePair<T> top = decode(bottleneck(taps.taps.back()), taps);
  Var<T> out = conv2d(concat_channels(top.visual, top.semantic), tape.param(*map_w_),
                      tape.param(*map_b_), {.pad = 1});
  out = clamp(add(out, padded), T(0), T(1));
  return (Hp == H && Wp == W) ? out : crop_spatial(out, H, W);
}

template <typename T>
Tensor<T> Model<T>::enhance(const Tensor<T>& img) const {
  const bool single = img.rank() == 3;
  Tape<T> tape;
  if (single) {
    const Shape& s = img.shape();
    return forward(tape, img.reshaped({1, s[0], s[1], s[2]})).value().reshaped(s);
  }
  return forward(tape, img).value();
}

// ---------------------------------------------------------------------------
// Checkpoints

template <typename T>
Checkpoint to_checkpoint(const Model<T>& model) {
  Checkpoint ck;
  ck.config = model.config().to_key_values();
  for (const auto& p : model.params()) ck.tensors.emplace_back(p.name, p.value.template cast<float>());
  return ck;
}

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ck, const ModelConfig* expected) {
  const ModelConfig config = ModelConfig::from_key_values(ck.config);
  if (expected) {
    if (auto key = ModelConfig::first_mismatch(config, *expected)) {
      std::string have, want;
      for (const auto& [k, v] : config.to_key_values())
        if (k == *key) have = v;
      for (const auto& [k, v] : expected->to_key_values())
        if (k == *key) want = v;
      throw ConfigError("checkpoint config mismatch at key '" + *key + "': checkpoint has " +
                        have + ", expected " + want);
    }
  }
  Model<T> model(config);
  std::size_t matched = 0;
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("adam.", 0) == 0) continue;
    Parameter<T>* p = model.params().find(name);
    if (!p) throw FormatError("checkpoint has unknown parameter '" + name + "'");
    if (p->value.shape() != t.shape())
      throw FormatError("checkpoint parameter '" + name + "' has shape " + to_string(t.shape()) +
                        ", model expects " + to_string(p->value.shape()));
    p->value = t.template cast<T>();
    ++matched;
  }
  if (matched != model.params().size()) {
    for (const auto& p : model.params())
      if (!ck.find(p.name)) throw FormatError("checkpoint lacks parameter '" + p.name + "'");
  }
  return model;
}

template <typename T>
void save_model(const Model<T>& model, const std::string& path) {
  to_checkpoint(model).save(path);
}

template <typename T>
Model<T> load_model(const std::string& path, const ModelConfig* expected) {
  return model_from_checkpoint<T>(Checkpoint::load(path), expected);
}

template class Model<float>;
template class Model<double>;

#define ECAF_INSTANTIATE(T)                                                        \
  template Checkpoint to_checkpoint(const Model<T>&);                              \
  template Model<T> model_from_checkpoint(const Checkpoint&, const ModelConfig*); \
  template void save_model(const Model<T>&, const std::string&);                   \
  template Model<T> load_model(const std::string&, const ModelConfig*);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
