// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "ecaf/ops.hpp"
#include "ecaf/training.hpp"
#include "test_support.hpp"

using namespace ecaf;
using ecaf::testing::random_tensor;
using ecaf::testing::TempDir;

namespace {

/// One step of f(x) = x^2 through the library: backward then adam_step.
void quadratic_step(ParamStore<double>& store, AdamState<double>& adam, double lr) {
  Tape<double> tape;
  const auto x = tape.param(store.get("x"));
  tape.backward(sum(mul(x, x)));
  adam_step(store, adam, lr);
}

Tensor<float> marker_image(Index size, Index y, Index x) {
  Tensor<float> img({3, size, size});
  for (Index c = 0; c < 3; ++c) img[(c * size + y) * size + x] = 1.0f;
  return img;
}

std::pair<Index, Index> find_marker(const Tensor<float>& img) {
  const Index H = img.dim(1), W = img.dim(2);
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      if (img[y * W + x] == 1.0f) return {y, x};
  return {-1, -1};
}

std::vector<ImagePair> tiny_dataset(std::uint64_t seed, Index n = 2) {
  Rng rng(seed);
  std::vector<ImagePair> data;
  for (Index i = 0; i < n; ++i) {
    auto ref = synth_reference(36, rng);
    auto low = synth_degrade(ref, DegradeParams{.seed = seed + static_cast<std::uint64_t>(i)});
    data.push_back({std::move(low), std::move(ref)});
  }
  return data;
}

TrainOptions tiny_options(Index iters) {
  TrainOptions opt;
  opt.iters = iters;
  opt.batch = 1;
  opt.patch = 32;
  opt.schedule.total_iters = 6;
  opt.log_every = 1;
  opt.ckpt_every = 100;
  opt.seed = 5;
  return opt;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("adam") {
  TEST_CASE("ten steps on x^2 match a scalar oracle") {
    ParamStore<double> store;
    store.add("x", Tensor<double>({1}, 1.0));
    AdamState<double> adam(store);
    double x = 1, m = 0, v = 0;
    for (int t = 1; t <= 10; ++t) {
      const double g = 2 * x;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double m_hat = m / (1 - std::pow(0.9, t)), v_hat = v / (1 - std::pow(0.999, t));
      x -= 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8);
      quadratic_step(store, adam, 0.1);
      CHECK(std::abs(store.get("x").value[0] - x) <= 1e-9);
    }
    CHECK(adam.step == 10);
  }

  TEST_CASE("the first step moves each element by lr against the gradient sign") {
    Rng rng(1);
    ParamStore<double> store;
    const auto start = random_tensor<double>({4, 5}, rng);
    store.add("w", start);
    const auto weights = random_tensor<double>({4, 5}, rng);
    AdamState<double> adam(store);
    Tape<double> tape;
    tape.backward(sum(mul(tape.param(store.get("w")), tape.leaf(weights))));
    const double lr = 1e-3;
    adam_step(store, adam, lr);
    const auto& w = store.get("w").value;
    for (Index i = 0; i < w.size(); ++i) {
      const double expected = start[i] - lr * (weights[i] > 0 ? 1 : -1);
      CHECK(std::abs(w[i] - expected) <= lr * 1e-6);
    }
    for (double g : store.get("w").grad.values()) CHECK(g == 0.0);
  }

  TEST_CASE("zero gradient or zero rate leaves parameters unchanged") {
    Rng rng(2);
    ParamStore<double> store;
    const auto start = random_tensor<double>({3, 3}, rng);
    store.add("w", start);
    AdamState<double> adam(store);
    {
      Tape<double> tape;
      tape.backward(sum(mul(tape.param(store.get("w")), tape.leaf(Tensor<double>({3, 3})))));
      adam_step(store, adam, 1e-2);
      CHECK(bitwise_equal(store.get("w").value, start));
    }
    {
      Tape<double> tape;
      const auto w = tape.param(store.get("w"));
      tape.backward(sum(mul(w, w)));
      adam_step(store, adam, 0.0);
      CHECK(bitwise_equal(store.get("w").value, start));
    }
  }

  TEST_CASE("a parameter without a gradient is named in the error") {
    ParamStore<double> store;
    store.add("used", Tensor<double>({1}, 1.0));
    store.add("unused", Tensor<double>({1}, 1.0));
    AdamState<double> adam(store);
    Tape<double> tape;
    tape.backward(sum(tape.param(store.get("used"))));
    try {
      adam_step(store, adam, 0.1);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("unused") != std::string::npos);
    }
  }
}

TEST_SUITE("cosine schedule") {
  TEST_CASE("endpoints and midpoint") {
    const Schedule s{.lr_start = 2e-4, .lr_end = 1e-6, .total_iters = 2000};
    CHECK(cosine_lr(0, s) == 2e-4);
    CHECK(cosine_lr(2000, s) == 1e-6);
    CHECK(cosine_lr(5000, s) == 1e-6);
    CHECK(std::abs(cosine_lr(1000, s) - 1.005e-4) <= 1e-15);
  }

  TEST_CASE("is monotone nonincreasing at every step") {
    const Schedule s;
    for (Index t = 1; t <= s.total_iters; ++t) CHECK(cosine_lr(t, s) <= cosine_lr(t - 1, s));
  }

  TEST_CASE("full-scale schedule values") {
    const Schedule s{.total_iters = 250000};
    CHECK(cosine_lr(0, s) == 2e-4);
    CHECK(cosine_lr(250000, s) == 1e-6);
    CHECK(std::abs(cosine_lr(62500, s) - (1e-6 + 0.5 * 1.99e-4 * (1 + std::cos(std::numbers::pi / 4)))) <= 1e-15);
  }

  TEST_CASE("invalid schedules are rejected") {
    CHECK_THROWS_AS((Schedule{.lr_start = 0}.validate()), ConfigError);
    CHECK_THROWS_AS((Schedule{.lr_start = 1e-4, .lr_end = 1e-3}.validate()), ConfigError);
  }
}

TEST_SUITE("patches") {
  TEST_CASE("a full-size patch returns the images") {
    Rng rng(3);
    const auto low = random_tensor<float>({3, 8, 8}, rng), ref = random_tensor<float>({3, 8, 8}, rng);
    const auto p = sample_patch(low, ref, 8, rng);
    CHECK(bitwise_equal(p.low, low));
    CHECK(bitwise_equal(p.ref, ref));
  }

  TEST_CASE("the same seed gives the same crop, and both halves share the window") {
    Rng data(4);
    const auto low = random_tensor<float>({3, 20, 17}, data);
    const auto ref = low;
    Rng a(9), b(9);
    for (int i = 0; i < 20; ++i) {
      const auto pa = sample_patch(low, ref, 6, a), pb = sample_patch(low, ref, 6, b);
      CHECK(bitwise_equal(pa.low, pb.low));
      CHECK(bitwise_equal(pa.low, pa.ref));
    }
  }

  TEST_CASE("offsets are uniform over the valid positions") {
    const Index size = 5, extent = size + 3;
    Tensor<float> low({3, extent, extent});
    for (Index y = 0; y < extent; ++y)
      for (Index x = 0; x < extent; ++x) low[y * extent + x] = static_cast<float>(y * extent + x);
    Rng rng(5);
    std::vector<int> counts(16);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      const auto p = sample_patch(low, low, size, rng);
      const auto origin = static_cast<Index>(p.low[0]);
      counts[static_cast<std::size_t>((origin / extent) * 4 + origin % extent)]++;
    }
    const double expected = draws / 16.0, spread = std::sqrt(draws * (1.0 / 16) * (15.0 / 16));
    double chi2 = 0;
    for (int c : counts) {
      CHECK(std::abs(c - expected) <= 3 * spread);
      chi2 += (c - expected) * (c - expected) / expected;
    }
    // 15 degrees of freedom: mean 15, standard deviation sqrt(30).
    CHECK(chi2 <= 15 + 3 * std::sqrt(30.0));
  }

  TEST_CASE("a patch larger than the image is rejected with a hint") {
    Tensor<float> img({3, 10, 12});
    Rng rng(6);
    try {
      sample_patch(img, img, 11, rng);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(std::string(e.what()).find("--patch") != std::string::npos);
    }
  }
}

TEST_SUITE("augmentation") {
  TEST_CASE("identity, involutions and inverses") {
    Rng rng(7);
    const auto square = random_tensor<float>({3, 6, 6}, rng);
    const auto wide = random_tensor<float>({3, 4, 7}, rng);
    CHECK(bitwise_equal(dihedral(square, 0), square));
    for (int k = 4; k < 8; ++k) CHECK(bitwise_equal(dihedral(dihedral(square, k), k), square));
    for (int k = 0; k < 8; ++k) {
      CAPTURE(k);
      CHECK(bitwise_equal(dihedral(dihedral(square, k), dihedral_inverse(k)), square));
      if (k % 2 == 0) CHECK(bitwise_equal(dihedral(dihedral(wide, k), dihedral_inverse(k)), wide));
    }
  }

  TEST_CASE("a quarter turn is counter-clockwise") {
    // Marker at the top-right corner moves to the top-left.
    const auto turned = dihedral(marker_image(4, 0, 3), 1);
    CHECK(find_marker(turned) == std::pair<Index, Index>{0, 0});
    CHECK(find_marker(dihedral(marker_image(4, 0, 3), 4)) == std::pair<Index, Index>{0, 0});
  }

  TEST_CASE("both halves receive the same transform") {
    Rng rng(8);
    std::vector<int> seen(8);
    for (int trial = 0; trial < 64; ++trial) {
      const Index y = rng.below(5), x = rng.below(5);
      const ImagePair pair{marker_image(5, y, x), marker_image(5, y, x)};
      Rng probe = rng;
      seen[static_cast<std::size_t>(draw_dihedral(probe))]++;
      const auto out = augment(pair, rng);
      CHECK(find_marker(out.low) == find_marker(out.ref));
      CHECK(find_marker(out.low).first >= 0);
    }
    CHECK(std::count(seen.begin(), seen.end(), 0) == 0);
  }

  TEST_CASE("quarter turns of non-square patches are rejected") {
    Tensor<float> img({3, 4, 6});
    CHECK_THROWS_AS(dihedral(img, 1), DimensionError);
  }
}

TEST_SUITE("training loop") {
  TEST_CASE("zero iterations log initial metrics and leave the model unchanged") {
    TempDir dir;
    Model<float> model(tiny_model());
    const Model<float> reference(tiny_model());
    auto opt = tiny_options(0);
    opt.out_dir = dir.path().string();
    std::vector<MetricsRecord> logged;
    const auto report = train(model, tiny_dataset(1), opt, FeatureNet<float>(),
                              [&](const MetricsRecord& r) { logged.push_back(r); });
    CHECK(report.iter == 0);
    CHECK(report.loss_history.empty());
    REQUIRE(logged.size() == 1);
    CHECK(logged[0].iter == 0);
    for (const auto& p : reference.params()) CHECK(bitwise_equal(p.value, model.params().get(p.name).value));
    std::ifstream log(dir / kTrainLogName);
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) ++lines;
    CHECK(lines == 1);
  }

  TEST_CASE("resuming reproduces an uninterrupted run bitwise") {
    const auto data = tiny_dataset(2);
    const FeatureNet<float> net;
    Model<float> straight(tiny_model());
    train(straight, data, tiny_options(4), net);

    TempDir dir;
    Model<float> first(tiny_model());
    auto opt = tiny_options(2);
    opt.out_dir = dir.path().string();
    const auto part = train(first, data, opt, net);
    REQUIRE_FALSE(part.last_checkpoint.empty());

    auto resume = tiny_options(4);
    resume.resume_from = part.last_checkpoint;
    Model<float> resumed = load_model<float>(part.last_checkpoint);
    const auto rest = train(resumed, data, resume, net);
    CHECK(rest.loss_history.size() == 2);
    for (const auto& p : straight.params()) CHECK(bitwise_equal(p.value, resumed.params().get(p.name).value));
  }

  TEST_CASE("invalid options are rejected before any work") {
    Model<float> model(tiny_model());
    const FeatureNet<float> net;
    CHECK_THROWS_AS(train(model, {}, tiny_options(1), net), ConfigError);
    auto opt = tiny_options(1);
    opt.patch = 64;
    CHECK_THROWS_AS(train(model, tiny_dataset(3), opt, net), DimensionError);
  }
}
