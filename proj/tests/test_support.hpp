// SPDX-License-Identifier: Apache-2.0
// Naive reference implementations and fixtures shared by the unit tests.
#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include <unistd.h>

#include "ecaf/rng.hpp"
#include "ecaf/tensor.hpp"

namespace ecaf::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Direct nested-loop cross-correlation with zero padding; accumulates in double.
template <typename T>
Tensor<T> conv_oracle(const Tensor<T>& x, const Tensor<T>& w, std::type_identity_t<const Tensor<T>*> b, Index stride,
                      Index pad, Index groups = 1) {
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Cout = w.dim(0), Cg = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const Index Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
  const Index out_per_group = Cout / groups;
  Tensor<T> out({B, Cout, Ho, Wo});
  for (Index n = 0; n < B; ++n)
    for (Index co = 0; co < Cout; ++co)
      for (Index oy = 0; oy < Ho; ++oy)
        for (Index ox = 0; ox < Wo; ++ox) {
          double acc = b ? static_cast<double>((*b)[co]) : 0.0;
          const Index g = co / out_per_group;
          for (Index ci = 0; ci < Cg; ++ci)
            for (Index ky = 0; ky < kh; ++ky)
              for (Index kx = 0; kx < kw; ++kx) {
                const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const Index c = g * Cg + ci;
                acc += static_cast<double>(x[((n * Cin + c) * H + iy) * W + ix]) *
                       static_cast<double>(w[((co * Cg + ci) * kh + ky) * kw + kx]);
              }
          out[((n * Cout + co) * Ho + oy) * Wo + ox] = static_cast<T>(acc);
        }
  (void)Cin;
  return out;
}

/// [m,k] x [k,n] by the textbook triple loop.
inline Tensor<double> matmul_oracle(const Tensor<double>& a, const Tensor<double>& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> out({m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double acc = 0;
      for (Index p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

/// Per-head attention written with explicit token loops. q, k, v: [B,C,H,W];
/// head h owns channels [h*dk, (h+1)*dk); scores are scaled by zeta[h].
inline Tensor<double> attention_oracle(const Tensor<double>& q, const Tensor<double>& k,
                                       const Tensor<double>& v, const std::vector<double>& zeta) {
  const Index B = q.dim(0), C = q.dim(1), N = q.dim(2) * q.dim(3);
  const Index heads = static_cast<Index>(zeta.size()), dk = C / heads;
  Tensor<double> out(q.shape());
  auto at = [&](const Tensor<double>& t, Index n, Index c, Index tok) { return t[(n * C + c) * N + tok]; };
  for (Index n = 0; n < B; ++n)
    for (Index h = 0; h < heads; ++h)
      for (Index i = 0; i < N; ++i) {
        std::vector<double> score(static_cast<std::size_t>(N));
        double peak = -INFINITY;
        for (Index j = 0; j < N; ++j) {
          double s = 0;
          for (Index d = 0; d < dk; ++d) s += at(q, n, h * dk + d, i) * at(k, n, h * dk + d, j);
          score[static_cast<std::size_t>(j)] = s * zeta[static_cast<std::size_t>(h)];
          peak = std::max(peak, score[static_cast<std::size_t>(j)]);
        }
        double total = 0;
        for (auto& s : score) total += (s = std::exp(s - peak));
        for (Index d = 0; d < dk; ++d) {
          double acc = 0;
          for (Index j = 0; j < N; ++j) acc += score[static_cast<std::size_t>(j)] / total * at(v, n, h * dk + d, j);
          out[(n * C + h * dk + d) * N + i] = acc;
        }
      }
  return out;
}

/// Temporary directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ecaf_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace ecaf::testing
