// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ecaf/gradcheck.hpp"
#include "ecaf/ops.hpp"
#include "test_support.hpp"

using namespace ecaf;
using ecaf::testing::conv_oracle;
using ecaf::testing::random_tensor;

namespace {

template <typename T>
Tensor<T> run_conv(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> b,
                   Conv2dOptions opt) {
  Tape<T> tape;
  const Var<T> bias = b ? tape.leaf(*b) : Var<T>{};
  return conv2d(tape.leaf(x), tape.leaf(w), bias, opt).value();
}

struct ConvCase {
  Shape x, w;
  Conv2dOptions opt;
};

// Covers the direct, grouped, pointwise and strided paths.
const std::vector<ConvCase> kConvCases{
    {{1, 2, 6, 6}, {3, 2, 3, 3}, {2, 1, 1}},
    {{2, 3, 5, 7}, {4, 3, 3, 3}, {1, 1, 1}},
    {{1, 4, 6, 5}, {8, 4, 1, 1}, {1, 0, 1}},
    {{2, 4, 8, 8}, {8, 4, 4, 4}, {2, 1, 1}},
    {{1, 6, 5, 5}, {6, 1, 3, 3}, {1, 1, 6}},
    {{1, 4, 8, 6}, {6, 2, 3, 3}, {2, 1, 2}},
};

}  // namespace

TEST_SUITE("conv2d") {
  TEST_CASE("1x1 unit kernel is the identity") {
    Rng rng(1);
    const auto x = random_tensor<float>({1, 1, 3, 3}, rng);
    CHECK(bitwise_equal(run_conv(x, Tensor<float>({1, 1, 1, 1}, 1.0f), nullptr, {}), x));
  }

  TEST_CASE("all-ones 3x3 kernel over a constant image sums the window") {
    const Tensor<float> out = run_conv(Tensor<float>({1, 1, 5, 5}, 1.0f), Tensor<float>({1, 1, 3, 3}, 1.0f),
                                       nullptr, {});
    CHECK(out.shape() == Shape{1, 1, 3, 3});
    for (float v : out.values()) CHECK(v == 9.0f);
  }

  TEST_CASE("matches the nested-loop oracle") {
    Rng rng(7);
    for (const auto& c : kConvCases) {
      CAPTURE(to_string(c.w));
      const auto x = random_tensor<double>(c.x, rng);
      const auto w = random_tensor<double>(c.w, rng);
      const auto b = random_tensor<double>({c.w[0]}, rng);
      const auto expect = conv_oracle(x, w, &b, c.opt.stride, c.opt.pad, c.opt.groups);
      CHECK(max_abs_diff(run_conv(x, w, &b, c.opt), expect) < 1e-12);
      const auto xf = x.cast<float>(), wf = w.cast<float>(), bf = b.cast<float>();
      CHECK(max_abs_diff(run_conv(xf, wf, &bf, c.opt), expect.cast<float>()) < 1e-5f);
    }
  }

  TEST_CASE("seeded 1x2x6x6 stride-2 instance within 1e-6 in float") {
    Rng rng(11);
    const auto x = random_tensor<float>({1, 2, 6, 6}, rng);
    const auto w = random_tensor<float>({3, 2, 3, 3}, rng);
    CHECK(max_abs_diff(run_conv(x, w, nullptr, {2, 1, 1}), conv_oracle(x, w, nullptr, 2, 1)) <= 1e-6f);
  }

  TEST_CASE("is linear in its input") {
    Rng rng(3);
    const auto x = random_tensor<double>({1, 3, 6, 6}, rng), y = random_tensor<double>({1, 3, 6, 6}, rng);
    const auto w = random_tensor<double>({2, 3, 3, 3}, rng);
    const double a = 0.7, b = -1.3;
    Tensor<double> mix(x.shape());
    for (Index i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const auto lhs = run_conv(mix, w, nullptr, {1, 1, 1});
    const auto cx = run_conv(x, w, nullptr, {1, 1, 1}), cy = run_conv(y, w, nullptr, {1, 1, 1});
    Tensor<double> rhs(lhs.shape());
    for (Index i = 0; i < rhs.size(); ++i) rhs[i] = a * cx[i] + b * cy[i];
    CHECK(max_abs_diff(lhs, rhs) < 1e-6);
  }

  TEST_CASE("is bitwise deterministic") {
    Rng rng(5);
    const auto x = random_tensor<float>({2, 4, 8, 8}, rng);
    const auto w = random_tensor<float>({8, 4, 4, 4}, rng);
    CHECK(bitwise_equal(run_conv(x, w, nullptr, {2, 1, 1}), run_conv(x, w, nullptr, {2, 1, 1})));
  }

  TEST_CASE("rejects a channel mismatch") {
    Tape<float> tape;
    CHECK_THROWS_AS(conv2d(tape.leaf(Tensor<float>({1, 3, 4, 4})), tape.leaf(Tensor<float>({2, 2, 3, 3})),
                           Var<float>{}, {1, 1, 1}),
                    DimensionError);
  }

  TEST_CASE("stride 2 needs even extents") {
    Tape<float> tape;
    const auto w = tape.leaf(Tensor<float>({1, 1, 3, 3}));
    CHECK_THROWS_AS(conv2d(tape.leaf(Tensor<float>({1, 1, 7, 6})), w, Var<float>{}, {2, 1, 1}), DimensionError);
    CHECK_THROWS_AS(conv2d(tape.leaf(Tensor<float>({1, 1, 6, 5})), w, Var<float>{}, {2, 1, 1}), DimensionError);
    CHECK(conv2d(tape.leaf(Tensor<float>({1, 1, 6, 8})), w, Var<float>{}, {2, 1, 1}).shape() == Shape{1, 1, 3, 4});
  }

  TEST_CASE("gradients match central differences on every path") {
    Rng rng(9);
    for (const auto& c : kConvCases) {
      CAPTURE(to_string(c.w));
      const auto x = random_tensor<double>(c.x, rng);
      const auto w = random_tensor<double>(c.w, rng);
      const auto b = random_tensor<double>({c.w[0]}, rng);
      const ScalarFn wrt_x = [&](Tape<double>& t, const Var<double>& in) {
        return sum(mul(conv2d(in, t.leaf(w), t.leaf(b), c.opt), conv2d(in, t.leaf(w), t.leaf(b), c.opt)));
      };
      const ScalarFn wrt_w = [&](Tape<double>& t, const Var<double>& in) {
        return sum(mul(conv2d(t.leaf(x), in, t.leaf(b), c.opt), conv2d(t.leaf(x), in, t.leaf(b), c.opt)));
      };
      const ScalarFn wrt_b = [&](Tape<double>& t, const Var<double>& in) {
        return sum(mul(conv2d(t.leaf(x), t.leaf(w), in, c.opt), conv2d(t.leaf(x), t.leaf(w), in, c.opt)));
      };
      CHECK(finite_diff_check(wrt_x, x) < 1e-4);
      CHECK(finite_diff_check(wrt_w, w) < 1e-4);
      CHECK(finite_diff_check(wrt_b, b) < 1e-4);
    }
  }
}

TEST_SUITE("depthwise_separable_conv") {
  TEST_CASE("zero depthwise stage yields the bias") {
    Rng rng(2);
    Tape<float> tape;
    const auto pw = random_tensor<float>({3, 3, 1, 1}, rng);
    const Tensor<float> b({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
    const auto out = depthwise_separable_conv(tape.leaf(random_tensor<float>({1, 3, 5, 5}, rng)),
                                              tape.leaf(Tensor<float>({3, 1, 3, 3})), tape.leaf(pw),
                                              tape.leaf(b))
                         .value();
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < 25; ++i) CHECK(out[c * 25 + i] == b[c]);
  }

  TEST_CASE("centre-tap depthwise and identity pointwise reproduce the input") {
    Rng rng(4);
    Tensor<float> dw({3, 1, 3, 3}), pw({3, 3, 1, 1});
    for (Index c = 0; c < 3; ++c) {
      dw[c * 9 + 4] = 1.0f;
      pw[c * 3 + c] = 1.0f;
    }
    const auto x = random_tensor<float>({2, 3, 4, 6}, rng);
    Tape<float> tape;
    const auto out = depthwise_separable_conv(tape.leaf(x), tape.leaf(dw), tape.leaf(pw),
                                              tape.leaf(Tensor<float>({3})));
    CHECK(bitwise_equal(out.value(), x));
  }

  TEST_CASE("equals the grouped-then-pointwise oracle composition") {
    Rng rng(6);
    const auto x = random_tensor<double>({1, 4, 6, 5}, rng);
    const auto dw = random_tensor<double>({4, 1, 3, 3}, rng);
    const auto pw = random_tensor<double>({5, 4, 1, 1}, rng);
    const auto b = random_tensor<double>({5}, rng);
    const auto expect = conv_oracle(conv_oracle(x, dw, nullptr, 1, 1, 4), pw, &b, 1, 0);
    Tape<double> tape;
    const auto got = depthwise_separable_conv(tape.leaf(x), tape.leaf(dw), tape.leaf(pw), tape.leaf(b));
    CHECK(max_abs_diff(got.value(), expect) <= 1e-6);
  }
}

TEST_SUITE("matmul_batched") {
  TEST_CASE("identity on the left returns the right operand") {
    Rng rng(8);
    const auto bm = random_tensor<double>({2, 3}, rng);
    Tape<double> tape;
    const Tensor<double> eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    CHECK(bitwise_equal(matmul_batched(tape.leaf(eye), tape.leaf(bm)).value(), bm));
  }

  TEST_CASE("hand-computed 2x2 by 2x1 product") {
    Tape<double> tape;
    const auto out = matmul_batched(tape.leaf(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3, 4})),
                                    tape.leaf(Tensor<double>({2, 1}, std::vector<double>{5, 6})));
    CHECK(out.value() == Tensor<double>({2, 1}, std::vector<double>{17, 39}));
  }

  TEST_CASE("matches the triple-loop oracle, including batched operands") {
    Rng rng(10);
    const auto a = random_tensor<double>({4, 5}, rng), b = random_tensor<double>({5, 6}, rng);
    Tape<double> tape;
    CHECK(max_abs_diff(matmul_batched(tape.leaf(a), tape.leaf(b)).value(), testing::matmul_oracle(a, b)) <= 1e-6);

    const auto ab = random_tensor<double>({3, 4, 5}, rng), bb = random_tensor<double>({3, 5, 2}, rng);
    const auto got = matmul_batched(tape.leaf(ab), tape.leaf(bb)).value();
    for (Index n = 0; n < 3; ++n) {
      Tensor<double> an({4, 5}), bn({5, 2});
      std::copy_n(ab.data() + n * 20, 20, an.data());
      std::copy_n(bb.data() + n * 10, 10, bn.data());
      const auto expect = testing::matmul_oracle(an, bn);
      for (Index i = 0; i < 8; ++i) CHECK(std::abs(got[n * 8 + i] - expect[i]) <= 1e-12);
    }
  }

  TEST_CASE("rejects mismatched inner extents") {
    Tape<double> tape;
    CHECK_THROWS_AS(matmul_batched(tape.leaf(Tensor<double>({2, 3})), tape.leaf(Tensor<double>({2, 3}))),
                    DimensionError);
  }
}

TEST_SUITE("softmax_lastdim") {
  Tensor<double> softmax_of(std::vector<double> row) {
    Tape<double> tape;
    const Index n = static_cast<Index>(row.size());
    return softmax_lastdim(tape.leaf(Tensor<double>({1, n}, std::move(row)))).value();
  }

  TEST_CASE("analytic examples") {
    CHECK(softmax_of({0, 0}) == Tensor<double>({1, 2}, std::vector<double>{0.5, 0.5}));
    const auto p = softmax_of({std::log(1.0), std::log(2.0), std::log(3.0)});
    CHECK(p[0] == doctest::Approx(1.0 / 6).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(2.0 / 6).epsilon(1e-14));
    CHECK(p[2] == doctest::Approx(3.0 / 6).epsilon(1e-14));
    CHECK(softmax_of({1000, 1000}) == Tensor<double>({1, 2}, std::vector<double>{0.5, 0.5}));
  }

  TEST_CASE("rows sum to one and ignore a constant shift") {
    Rng rng(12);
    for (const Shape& shape : {Shape{3, 7}, Shape{2, 4, 16}, Shape{5, 1}}) {
      const auto x = random_tensor<float>(shape, rng, -20, 20);
      Tensor<float> shifted = x;
      for (auto& v : shifted.values()) v += 37.5f;
      Tape<float> tape;
      const auto p = softmax_lastdim(tape.leaf(x)).value();
      const auto q = softmax_lastdim(tape.leaf(shifted)).value();
      CHECK(max_abs_diff(p, q) < 1e-6f);
      const Index n = shape.back();
      for (Index r = 0; r < p.size() / n; ++r) {
        double total = 0;
        for (Index j = 0; j < n; ++j) total += p[r * n + j];
        CHECK(std::abs(total - 1.0) <= 1e-6);
      }
    }
  }
}

TEST_SUITE("resample") {
  TEST_CASE("down halves the extent and doubles the channels") {
    Rng rng(13);
    Tape<float> tape;
    const auto out = resample_down(tape.leaf(random_tensor<float>({1, 4, 8, 8}, rng)),
                                   tape.leaf(random_tensor<float>({8, 4, 4, 4}, rng)), tape.leaf(Tensor<float>({8})));
    CHECK(out.shape() == Shape{1, 8, 4, 4});
  }

  TEST_CASE("down with zero weights outputs the bias everywhere") {
    Rng rng(14);
    Tape<float> tape;
    const auto out = resample_down(tape.leaf(random_tensor<float>({1, 2, 6, 6}, rng)),
                                   tape.leaf(Tensor<float>({4, 2, 4, 4})), tape.leaf(Tensor<float>({4}, 0.25f)));
    CHECK(out.shape() == Shape{1, 4, 3, 3});
    for (float v : out.value().values()) CHECK(v == 0.25f);
  }

  TEST_CASE("down equals the stride-2 oracle") {
    Rng rng(15);
    const auto x = random_tensor<double>({2, 3, 6, 4}, rng);
    const auto w = random_tensor<double>({6, 3, 4, 4}, rng);
    const auto b = random_tensor<double>({6}, rng);
    Tape<double> tape;
    CHECK(max_abs_diff(resample_down(tape.leaf(x), tape.leaf(w), tape.leaf(b)).value(),
                       conv_oracle(x, w, &b, 2, 1)) <= 1e-6);
  }

  TEST_CASE("up doubles the extent and halves the channels") {
    Rng rng(16);
    Tape<float> tape;
    const auto out = resample_up(tape.leaf(random_tensor<float>({1, 8, 4, 4}, rng)),
                                 tape.leaf(random_tensor<float>({4, 8, 1, 1}, rng)), tape.leaf(Tensor<float>({4})));
    CHECK(out.shape() == Shape{1, 4, 8, 8});
  }

  TEST_CASE("up with a channel-selecting kernel duplicates pixels into 2x2 blocks") {
    Rng rng(17);
    const auto x = random_tensor<float>({1, 4, 3, 2}, rng);
    Tensor<float> w({2, 4, 1, 1});
    w[0 * 4 + 0] = 1.0f;
    w[1 * 4 + 1] = 1.0f;
    Tape<float> tape;
    const auto out = resample_up(tape.leaf(x), tape.leaf(w), tape.leaf(Tensor<float>({2}))).value();
    for (Index c = 0; c < 2; ++c)
      for (Index y = 0; y < 6; ++y)
        for (Index xx = 0; xx < 4; ++xx) CHECK(out[(c * 6 + y) * 4 + xx] == x[(c * 3 + y / 2) * 2 + xx / 2]);
  }

  TEST_CASE("up after down restores the shape") {
    Rng rng(18);
    Tape<float> tape;
    const auto x = tape.leaf(random_tensor<float>({2, 4, 6, 10}, rng));
    const auto down = resample_down(x, tape.leaf(random_tensor<float>({8, 4, 4, 4}, rng)), tape.leaf(Tensor<float>({8})));
    const auto up = resample_up(down, tape.leaf(random_tensor<float>({4, 8, 1, 1}, rng)), tape.leaf(Tensor<float>({4})));
    CHECK(up.shape() == x.shape());
  }

  TEST_CASE("down rejects odd extents") {
    Tape<float> tape;
    CHECK_THROWS_AS(resample_down(tape.leaf(Tensor<float>({1, 2, 5, 4})), tape.leaf(Tensor<float>({4, 2, 4, 4})),
                                  tape.leaf(Tensor<float>({4}))),
                    DimensionError);
  }
}

TEST_SUITE("concat and slice") {
  TEST_CASE("concatenating an empty channel block is the identity") {
    Rng rng(19);
    const auto x = random_tensor<float>({2, 3, 4, 5}, rng);
    Tape<float> tape;
    CHECK(bitwise_equal(concat_channels(tape.leaf(x), tape.leaf(Tensor<float>({2, 0, 4, 5}))).value(), x));
  }

  TEST_CASE("slice recovers both halves bitwise") {
    Rng rng(20);
    const auto a = random_tensor<float>({2, 3, 4, 5}, rng), c = random_tensor<float>({2, 2, 4, 5}, rng);
    Tape<float> tape;
    const auto cat = concat_channels(tape.leaf(a), tape.leaf(c));
    CHECK(bitwise_equal(slice_channels(cat, 0, 3).value(), a));
    CHECK(bitwise_equal(slice_channels(cat, 3, 5).value(), c));
  }

  TEST_CASE("gradient of the sum reaches each operand as ones") {
    Rng rng(21);
    Tape<double> tape;
    const auto a = tape.leaf(random_tensor<double>({1, 2, 3, 3}, rng), true);
    const auto c = tape.leaf(random_tensor<double>({1, 1, 3, 3}, rng), true);
    tape.backward(sum(concat_channels(a, c)));
    CHECK(a.grad() == Tensor<double>(a.shape(), 1.0));
    CHECK(c.grad() == Tensor<double>(c.shape(), 1.0));
  }
}

TEST_SUITE("autodiff") {
  TEST_CASE("sum gives unit gradients and sum of squares gives 2x") {
    Rng rng(22);
    const auto x0 = random_tensor<double>({3, 4}, rng);
    Tape<double> tape;
    const auto x = tape.leaf(x0, true);
    tape.backward(sum(x));
    CHECK(x.grad() == Tensor<double>({3, 4}, 1.0));

    Tape<double> tape2;
    const auto y = tape2.leaf(x0, true);
    tape2.backward(sum(mul(y, y)));
    for (Index i = 0; i < x0.size(); ++i) CHECK(y.grad()[i] == 2 * x0[i]);
  }

  TEST_CASE("a reused value accumulates gradient from every consumer") {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>({2}, std::vector<double>{1.5, -2.0}), true);
    tape.backward(sum(add(scale(x, 3.0), mul(x, x))));
    CHECK(x.grad()[0] == doctest::Approx(3 + 2 * 1.5));
    CHECK(x.grad()[1] == doctest::Approx(3 - 4.0));
  }

  TEST_CASE("non-finite values are rejected") {
    Tape<double> tape;
    const auto x = tape.leaf(Tensor<double>({1}, 1e308));
    CHECK_THROWS_AS(scale(x, 1e10), NumericError);
  }
}

TEST_SUITE("finite differences") {
  TEST_CASE("exact on a quadratic") {
    Rng rng(23);
    const ScalarFn f = [](Tape<double>&, const Var<double>& x) { return sum(mul(x, x)); };
    CHECK(finite_diff_check(f, random_tensor<double>({4, 3}, rng)) < 1e-8);
  }

  TEST_CASE("a doubled analytic gradient reports an error near one half") {
    Rng rng(24);
    const ScalarFn f = [](Tape<double>&, const Var<double>& x) { return sum(mul(x, x)); };
    GradCheckOptions opt;
    opt.analytic_scale = 2.0;
    CHECK(finite_diff_report(f, random_tensor<double>({4, 3}, rng), opt).max_rel_error ==
          doctest::Approx(0.5).epsilon(1e-6));
  }

  TEST_CASE("every differentiable op passes on three shapes") {
    Rng rng(25);
    const std::vector<Shape> shapes{{1, 2, 4, 4}, {2, 4, 2, 6}, {1, 6, 6, 2}};
    for (const Shape& s : shapes) {
      CAPTURE(to_string(s));
      const auto other = random_tensor<double>(s, rng);
      const auto weights = random_tensor<double>(s, rng);
      auto check = [&](const char* name, const ScalarFn& f, const Tensor<double>& x) {
        CAPTURE(name);
        CHECK(finite_diff_check(f, x) < 1e-4);
      };
      // Random projection so every output element carries a distinct weight.
      auto project = [](Tape<double>& t, const Var<double>& v) {
        Rng r(99);
        return sum(mul(v, t.leaf(random_tensor<double>(v.shape(), r))));
      };
      const auto x = random_tensor<double>(s, rng);
      check("add", [&](Tape<double>& t, const Var<double>& in) { return project(t, add(in, t.leaf(other))); }, x);
      check("sub", [&](Tape<double>& t, const Var<double>& in) { return project(t, sub(t.leaf(other), in)); }, x);
      check("mul", [&](Tape<double>& t, const Var<double>& in) { return project(t, mul(in, t.leaf(other))); }, x);
      check("scale", [&](Tape<double>& t, const Var<double>& in) { return project(t, scale(in, -2.5)); }, x);
      check("mean", [&](Tape<double>&, const Var<double>& in) { return mean(mul(in, in)); }, x);
      check("softmax", [&](Tape<double>& t, const Var<double>& in) { return project(t, softmax_lastdim(in)); }, x);
      check("transpose", [&](Tape<double>& t, const Var<double>& in) { return project(t, transpose_last2(in)); }, x);
      check("reshape", [&](Tape<double>& t, const Var<double>& in) {
        return project(t, reshape(in, Shape{s[0], s[1] * s[2] * s[3]}));
      }, x);
      check("matmul", [&](Tape<double>& t, const Var<double>& in) {
        return project(t, matmul_batched(in, transpose_last2(t.leaf(weights))));
      }, x);
      check("concat", [&](Tape<double>& t, const Var<double>& in) {
        return project(t, concat_channels(t.leaf(other), in));
      }, x);
      check("slice", [&](Tape<double>& t, const Var<double>& in) { return project(t, slice_channels(in, 1, s[1])); }, x);
      check("upsample", [&](Tape<double>& t, const Var<double>& in) { return project(t, upsample_nearest2x(in)); }, x);
      check("pad", [&](Tape<double>& t, const Var<double>& in) {
        return project(t, pad_spatial(in, s[2] + 3, s[3] + 1));
      }, x);
      check("crop", [&](Tape<double>& t, const Var<double>& in) { return project(t, crop_spatial(in, s[2] - 1, s[3])); }, x);
      // Keep inputs away from the kinks so the central difference is valid.
      Tensor<double> away = x;
      for (auto& v : away.values()) v = v < 0 ? v - 0.1 : v + 0.1;
      check("relu", [&](Tape<double>& t, const Var<double>& in) { return project(t, relu(in)); }, away);
      check("clamp", [&](Tape<double>& t, const Var<double>& in) { return project(t, clamp(in, -0.5, 0.5)); },
            [&] {
              Tensor<double> c = x;
              for (auto& v : c.values()) v = std::abs(std::abs(v) - 0.5) < 0.05 ? v * 0.8 : v;
              return c;
            }());
      const auto gain = random_tensor<double>({s[1]}, rng), bias = random_tensor<double>({s[1]}, rng);
      check("layer_norm", [&](Tape<double>& t, const Var<double>& in) {
        return project(t, channel_layer_norm(in, t.leaf(gain), t.leaf(bias)));
      }, x);
    }
  }
}

TEST_SUITE("tensor serialization") {
  TEST_CASE("stream round trip is bitwise") {
    Rng rng(26);
    const auto t = random_tensor<float>({2, 3, 4}, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    CHECK(bitwise_equal(read_tensor<float>(ss), t));
  }

  TEST_CASE("a truncated stream is a format error") {
    Rng rng(27);
    std::stringstream ss;
    write_tensor(ss, random_tensor<double>({5}, rng));
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 3);
    std::stringstream cut(bytes);
    CHECK_THROWS(read_tensor<double>(cut));
  }
}
