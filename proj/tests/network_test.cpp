// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "ecaf/gradcheck.hpp"
#include "ecaf/network.hpp"
#include "ecaf/ops.hpp"
#include "test_support.hpp"

using namespace ecaf;
using ecaf::testing::random_tensor;
using ecaf::testing::TempDir;

namespace {

ModelConfig small_config(Index c0 = 4) {
  ModelConfig cfg;
  cfg.base_channels = c0;
  cfg.seed = 7;
  return cfg;
}

/// Model with a random (nonzero) mapping conv so the output depends on the body.
template <typename T>
Model<T> perturbed_model(const ModelConfig& cfg, double scale = 0.05) {
  Model<T> model(cfg);
  Rng rng(cfg.seed + 100);
  for (const char* name : {"map_w", "map_b"})
    for (auto& v : model.params().get(name).value.values()) v = static_cast<T>(rng.uniform(-scale, scale));
  return model;
}

/// Largest |dy| or |dx| from (cy, cx) at which two [1,C,H,W] tensors differ, or -1.
Index changed_radius(const Tensor<float>& a, const Tensor<float>& b, Index cy, Index cx) {
  const Index C = a.dim(1), H = a.dim(2), W = a.dim(3);
  Index radius = -1;
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const Index i = (c * H + y) * W + x;
        if (a[i] != b[i]) radius = std::max({radius, std::abs(y - cy), std::abs(x - cx)});
      }
  return radius;
}

}  // namespace

TEST_SUITE("extractor") {
  TEST_CASE("produces two C0-channel maps at input resolution") {
    Model<float> model(ModelConfig{});
    Tape<float> tape;
    Rng rng(1);
    const auto pair = model.extract_visual_semantic(tape.leaf(random_tensor<float>({1, 3, 16, 16}, rng, 0, 1)));
    CHECK(pair.visual.shape() == Shape{1, 8, 16, 16});
    CHECK(pair.semantic.shape() == Shape{1, 8, 16, 16});
  }

  TEST_CASE("zero second-branch weights leave only its bias") {
    Model<float> model(small_config());
    for (const char* name : {"vsc.ds2_dw", "vsc.ds2_pw"}) model.params().get(name).value.fill(0);
    auto& bias = model.params().get("vsc.ds2_b").value;
    for (Index c = 0; c < bias.size(); ++c) bias[c] = 0.25f * static_cast<float>(c + 1);
    Tape<float> tape;
    Rng rng(2);
    const auto fs = model.extract_visual_semantic(tape.leaf(random_tensor<float>({2, 3, 8, 8}, rng, 0, 1))).semantic.value();
    for (Index i = 0; i < fs.size(); ++i) CHECK(fs[i] == bias[(i / 64) % 4]);
  }

  TEST_CASE("receptive fields are 3x3 for f_v and 7x7 for f_s") {
    Model<float> model(small_config());
    Rng rng(3);
    const auto img = random_tensor<float>({1, 3, 16, 16}, rng, 0, 1);
    auto probe = img;
    probe[(1 * 16 + 8) * 16 + 8] += 0.5f;
    Tape<float> tape;
    const auto base = model.extract_visual_semantic(tape.leaf(img));
    const auto hit = model.extract_visual_semantic(tape.leaf(probe));
    CHECK(changed_radius(base.visual.value(), hit.visual.value(), 8, 8) == 1);
    CHECK(changed_radius(base.semantic.value(), hit.semantic.value(), 8, 8) == 3);
  }

  TEST_CASE("wrong input channel count is rejected") {
    Model<float> model(small_config());
    Tape<float> tape;
    CHECK_THROWS_AS(model.extract_visual_semantic(tape.leaf(Tensor<float>({1, 4, 8, 8}))), ConfigError);
  }
}

TEST_SUITE("encoder") {
  TEST_CASE("stages halve the extent and double the channels") {
    Model<float> model(ModelConfig{});
    Rng rng(4);
    Tape<float> tape;
    const FeaturePair<float> pair{tape.leaf(random_tensor<float>({1, 8, 16, 16}, rng)),
                                  tape.leaf(random_tensor<float>({1, 8, 16, 16}, rng))};
    const auto s1 = model.encoder_stage(pair, 0);
    CHECK(s1.visual.shape() == Shape{1, 16, 8, 8});
    const auto s2 = model.encoder_stage(s1, 1);
    CHECK(s2.semantic.shape() == Shape{1, 32, 4, 4});
    const auto taps = model.encode(pair);
    REQUIRE(taps.taps.size() == 3);
    for (Index s = 0; s < 3; ++s) {
      CHECK(taps.taps[s].visual.shape() == Shape{1, 8 << s, 16 >> s, 16 >> s});
      CHECK(taps.taps[s].semantic.shape() == Shape{1, 8 << s, 16 >> s, 16 >> s});
    }
  }

  TEST_CASE("odd extents are rejected") {
    Model<float> model(small_config());
    Tape<float> tape;
    const FeaturePair<float> pair{tape.leaf(Tensor<float>({1, 4, 5, 6})), tape.leaf(Tensor<float>({1, 4, 5, 6}))};
    CHECK_THROWS_AS(model.encoder_stage(pair, 0), DimensionError);
  }

  TEST_CASE("one stage passes a gradient check") {
    Model<double> model(small_config());
    Rng rng(5);
    const auto sem = random_tensor<double>({1, 4, 4, 4}, rng);
    const auto proj = random_tensor<double>({1, 8, 2, 2}, rng);
    const ScalarFn f = [&](Tape<double>& t, const Var<double>& vis) {
      const auto out = model.encoder_stage({vis, t.leaf(sem)}, 0);
      return add(sum(mul(out.visual, t.leaf(proj))), sum(out.semantic));
    };
    CHECK(finite_diff_check(f, random_tensor<double>({1, 4, 4, 4}, rng)) < 1e-4);
  }
}

TEST_SUITE("forward") {
  TEST_CASE("is the identity at initialization") {
    Model<float> model(ModelConfig{});
    Rng rng(6);
    const auto img = random_tensor<float>({2, 3, 16, 16}, rng, 0, 1);
    Tape<float> tape;
    CHECK(bitwise_equal(model.forward(tape, img).value(), img));
  }

  TEST_CASE("output shape matches the input for sizes that need padding") {
    auto model = perturbed_model<float>(small_config());
    Rng rng(7);
    for (Index h : {8, 9, 11, 20})
      for (Index w : {8, 13, 20}) {
        CAPTURE(h);
        CAPTURE(w);
        const auto out = model.enhance(random_tensor<float>({1, 3, h, w}, rng, 0, 1));
        CHECK(out.shape() == Shape{1, 3, h, w});
      }
    CHECK(model.enhance(random_tensor<float>({3, 12, 10}, rng, 0, 1)).shape() == Shape{3, 12, 10});
  }

  TEST_CASE("output stays within [0, 1]") {
    auto model = perturbed_model<float>(small_config(), 2.0);
    Rng rng(8);
    const auto out = model.enhance(random_tensor<float>({1, 3, 12, 12}, rng, 0, 1));
    for (float v : out.values()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("out-of-range input is clamped") {
    Model<float> model(small_config());
    Tensor<float> img({1, 3, 8, 8}, 1.5f);
    img[0] = -0.5f;
    const auto out = model.enhance(img);
    CHECK(out[0] == 0.0f);
    CHECK(out[1] == 1.0f);
  }

  TEST_CASE("too small an input is rejected") {
    Model<float> model(small_config());
    CHECK_THROWS_AS(model.enhance(Tensor<float>({1, 3, 4, 8})), DimensionError);
  }

  TEST_CASE("repeated forwards are bitwise identical") {
    const auto cfg = small_config();
    auto a = perturbed_model<float>(cfg);
    auto b = perturbed_model<float>(cfg);
    Rng rng(9);
    const auto img = random_tensor<float>({1, 3, 12, 12}, rng, 0, 1);
    const auto first = a.enhance(img);
    CHECK(bitwise_equal(first, a.enhance(img)));
    CHECK(bitwise_equal(first, b.enhance(img)));
  }

  TEST_CASE("ablation variants run and keep the shape") {
    Rng rng(10);
    const auto img = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
    auto no_vsf = small_config();
    no_vsf.vsf = false;
    auto no_dmsa = small_config();
    no_dmsa.attention = AttentionKind::mhsa;
    auto primed = small_config();
    primed.use_primed_mid = true;
    for (const auto& cfg : {no_vsf, no_dmsa, primed})
      CHECK(perturbed_model<float>(cfg).enhance(img).shape() == img.shape());
    CHECK(Model<float>(no_vsf).parameter_count() < Model<float>(small_config()).parameter_count());
  }
}

TEST_SUITE("model config") {
  TEST_CASE("parameter counts are pinned and the desk model stays small") {
    // Regression pins for C0 = 4, 8, 16, 32 with the default heads.
    const std::pair<Index, Index> pins[] = {{4, 22755}, {8, 83803}, {16, 320907}, {32, 1255147}};
    for (auto [c0, count] : pins) {
      CAPTURE(c0);
      CHECK(Model<float>(small_config(c0)).parameter_count() == count);
    }
    CHECK(Model<float>(ModelConfig{}).parameter_count() < 200000);
  }

  TEST_CASE("invalid configurations name the key") {
    auto cfg = small_config();
    cfg.heads = {2, 2, 3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.heads = {2, 0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config(0);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("key-value round trip") {
    auto cfg = small_config(16);
    cfg.heads = {1, 2, 4};
    cfg.layer_norm = true;
    cfg.attention = AttentionKind::mhsa;
    const auto back = ModelConfig::from_key_values(cfg.to_key_values());
    CHECK_FALSE(ModelConfig::first_mismatch(cfg, back).has_value());
    auto other = back;
    other.base_channels = 8;
    CHECK(ModelConfig::first_mismatch(cfg, other) == std::optional<std::string>("base_channels"));
    CHECK_THROWS_AS(ModelConfig::from_key_values({{"bogus", "1"}}), ConfigError);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save and load reproduce the model") {
    TempDir dir;
    const auto cfg = small_config();
    auto model = perturbed_model<float>(cfg);
    save_model(model, dir / "m.ecak");
    const auto loaded = load_model<float>(dir / "m.ecak");
    CHECK_FALSE(ModelConfig::first_mismatch(cfg, loaded.config()).has_value());
    Rng rng(11);
    const auto img = random_tensor<float>({1, 3, 8, 8}, rng, 0, 1);
    CHECK(bitwise_equal(model.enhance(img), loaded.enhance(img)));
  }

  TEST_CASE("a config mismatch names the first differing key") {
    TempDir dir;
    save_model(Model<float>(small_config()), dir / "m.ecak");
    const auto expected = small_config(8);
    try {
      load_model<float>(dir / "m.ecak", &expected);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("base_channels") != std::string::npos);
    }
  }

  TEST_CASE("missing parameters are a format error") {
    auto ck = to_checkpoint(Model<float>(small_config()));
    ck.tensors.pop_back();
    CHECK_THROWS_AS(model_from_checkpoint<float>(ck), FormatError);
  }

  TEST_CASE("double models round trip through float storage") {
    auto model = perturbed_model<double>(small_config());
    const auto back = model_from_checkpoint<double>(to_checkpoint(model));
    for (const auto& p : model.params())
      CHECK(max_abs_diff(p.value, back.params().get(p.name).value) < 1e-7);
  }
}
