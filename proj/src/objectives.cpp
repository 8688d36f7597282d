// SPDX-License-Identifier: Apache-2.0
#include "ecaf/objectives.hpp"

#include <cmath>

#include <json.hpp>

#include "ecaf/init.hpp"
#include "ecaf/ops.hpp"

namespace ecaf {

void LossWeights::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ConfigError("lambda must lie in [0, 1], got " + std::to_string(lambda));
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0, got " + std::to_string(epsilon));
}

namespace {

// Neumaier summation in double.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      carry_ += (sum_ - t) + v;
    else
      carry_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

template <typename T>
void check_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() == b.shape()) return;
  if (a.shape().size() != b.shape().size())
    throw DimensionError(op, "rank", static_cast<Index>(a.shape().size()),
                         static_cast<Index>(b.shape().size()));
  for (std::size_t i = 0; i < a.shape().size(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw DimensionError(op, "axis " + std::to_string(i), a.shape()[i], b.shape()[i]);
}

// Records sum/mean of f(pred - ref) with derivative df.
template <typename T, typename F, typename DF>
Var<T> pointwise_loss(const char* op, const Var<T>& pred, const Var<T>& ref, Reduction reduction,
                      F f, DF df) {
  check_same_shape(op, pred, ref);
  const auto& p = pred.value();
  const auto& r = ref.value();
  const Index n = p.size();
  CompensatedSum acc;
  for (Index i = 0; i < n; ++i) acc.add(static_cast<double>(f(p[i] - r[i])));
  double total = acc.value();
  const T norm = reduction == Reduction::mean && n > 0 ? T(1) / static_cast<T>(n) : T(1);
  if (reduction == Reduction::mean && n > 0) total /= static_cast<double>(n);
  return pred.tape().record(op, Tensor<T>({}, static_cast<T>(total)), {pred, ref},
                            [pred, ref, norm, df](Tape<T>& tape, const Tensor<T>& gy) {
                              Tensor<T>* gp = tape.grad_sink(pred);
                              Tensor<T>* gr = tape.grad_sink(ref);
                              const auto& pv = pred.value();
                              const auto& rv = ref.value();
                              const T g = gy.item() * norm;
                              for (Index i = 0; i < pv.size(); ++i) {
                                const T d = g * df(pv[i] - rv[i]);
                                if (gp) (*gp)[i] += d;
                                if (gr) (*gr)[i] -= d;
                              }
                            });
}

}  // namespace

template <typename T>
Var<T> charbonnier(const Var<T>& pred, const Var<T>& ref, T eps, Reduction reduction) {
  if (!(eps > T(0))) throw ConfigError("charbonnier: epsilon must be > 0");
  const T eps2 = eps * eps;
  return pointwise_loss(
      "charbonnier", pred, ref, reduction, [eps2](T d) { return std::sqrt(d * d + eps2); },
      [eps2](T d) { return d / std::sqrt(d * d + eps2); });
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& ref, Reduction reduction) {
  return pointwise_loss(
      "l1_loss", pred, ref, reduction, [](T d) { return std::abs(d); },
      [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); });
}

// ---------------------------------------------------------------------------
// FeatureNet

namespace {

Shape feature_weight_shape(int stage) {
  using FN = FeatureNet<float>;
  const Index cin = FN::kChannels[static_cast<std::size_t>(stage)];
  const Index cout = FN::kChannels[static_cast<std::size_t>(stage) + 1];
  const Index k = stage == 0 ? 3 : 4;
  return {cout, cin, k, k};
}

}  // namespace

template <typename T>
FeatureNet<T>::FeatureNet(std::uint64_t seed) {
  Rng rng = Rng(seed).split("feature_net");
  for (int s = 0; s < kStages; ++s) {
    Shape shape = feature_weight_shape(s);
    const Index fan_in = shape[1] * shape[2] * shape[3];
    const Index cout = shape[0];
    // He-uniform bound sqrt(6 / fan_in) keeps ReLU activations from shrinking.
    weights_.push_back(kaiming_uniform<T>(std::move(shape), fan_in, rng, std::sqrt(6.0)));
    biases_.push_back(Tensor<T>({cout}));
  }
}

template <typename T>
FeatureNet<T> FeatureNet<T>::from_checkpoint(const Checkpoint& ck) {
  std::vector<Tensor<T>> w, b;
  for (int s = 0; s < kStages; ++s) {
    const std::string wn = "feature.w" + std::to_string(s + 1);
    const std::string bn = "feature.b" + std::to_string(s + 1);
    const Tensor<float>* wt = ck.find(wn);
    const Tensor<float>* bt = ck.find(bn);
    if (!wt || !bt) throw FormatError("feature-net checkpoint lacks " + (wt ? bn : wn));
    const Shape expect = feature_weight_shape(s);
    if (wt->shape() != expect)
      throw FormatError(wn + " has shape " + to_string(wt->shape()) + ", expected " +
                        to_string(expect));
    if (bt->shape() != Shape{expect[0]})
      throw FormatError(bn + " has shape " + to_string(bt->shape()) + ", expected [" +
                        std::to_string(expect[0]) + "]");
    w.push_back(wt->template cast<T>());
    b.push_back(bt->template cast<T>());
  }
  return FeatureNet(std::move(w), std::move(b));
}

template <typename T>
Checkpoint FeatureNet<T>::to_checkpoint() const {
  Checkpoint ck;
  for (int s = 0; s < kStages; ++s) {
    ck.tensors.emplace_back("feature.w" + std::to_string(s + 1),
                            weights_[static_cast<std::size_t>(s)].template cast<float>());
    ck.tensors.emplace_back("feature.b" + std::to_string(s + 1),
                            biases_[static_cast<std::size_t>(s)].template cast<float>());
  }
  return ck;
}

template <typename T>
std::vector<Var<T>> FeatureNet<T>::features(const Var<T>& img,
                                            std::vector<Var<T>>* weight_vars) const {
  Tape<T>& tape = img.tape();
  std::vector<Var<T>> out;
  Var<T> x = img;
  for (int s = 0; s < kStages; ++s) {
    const Var<T> w = tape.leaf(weights_[static_cast<std::size_t>(s)]);
    const Var<T> b = tape.leaf(biases_[static_cast<std::size_t>(s)]);
    if (weight_vars) {
      weight_vars->push_back(w);
      weight_vars->push_back(b);
    }
    const Conv2dOptions opt = s == 0 ? Conv2dOptions{.stride = 1, .pad = 1}
                                     : Conv2dOptions{.stride = 2, .pad = 1};
    x = relu(conv2d(x, w, b, opt));
    out.push_back(x);
  }
  return out;
}

template <typename T>
Var<T> perceptual(const Var<T>& pred, const Var<T>& ref, const FeatureNet<T>& net,
                  std::vector<Var<T>>* weight_vars) {
  check_same_shape("perceptual", pred, ref);
  if (pred.shape().size() != 4) throw DimensionError("perceptual", "rank", 4, pred.shape().size());
  using FN = FeatureNet<T>;
  const Index H = pred.dim(2), W = pred.dim(3);
  if (H < FN::kMinExtent) throw DimensionError("perceptual", "H", FN::kMinExtent, H);
  if (W < FN::kMinExtent) throw DimensionError("perceptual", "W", FN::kMinExtent, W);
  const Index m = FN::kSpatialMultiple;
  const Index Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
  auto padded = [&](const Var<T>& x) { return Hp == H && Wp == W ? x : pad_spatial(x, Hp, Wp); };
  const std::vector<Var<T>> fp = net.features(padded(pred), weight_vars);
  const std::vector<Var<T>> fr = net.features(padded(ref), weight_vars);
  Var<T> total;
  for (std::size_t s = 0; s < fp.size(); ++s) {
    const Var<T> d = sub(fp[s], fr[s]);
    const Var<T> term = mean(mul(d, d));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
LossTerms<T> total_loss(const Var<T>& pred, const Var<T>& ref, const LossWeights& w,
                        const FeatureNet<T>& net) {
  w.validate();
  LossTerms<T> out;
  if (w.l1_only) {
    out.pixel = l1_loss(pred, ref, w.pixel_reduction);
    out.total = out.pixel;
    return out;
  }
  out.perceptual = perceptual(pred, ref, net);
  out.pixel = charbonnier(pred, ref, static_cast<T>(w.epsilon), w.pixel_reduction);
  const T lambda = static_cast<T>(w.lambda);
  out.total = add(scale(out.perceptual, lambda), scale(out.pixel, T(1) - lambda));
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& ref) {
  if (pred.shape() != ref.shape())
    throw DimensionError("psnr", "shapes " + to_string(pred.shape()) + " and " +
                                     to_string(ref.shape()) + " differ");
  if (pred.size() == 0) throw DimensionError("psnr", "empty input");
  double acc = 0.0;
  for (Index i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(ref[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(pred.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-(x * x) / (2.0 * kSsimSigma * kSsimSigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable valid-region filtering of one H x W plane.
std::vector<double> filter_valid(const std::vector<double>& plane, Index H, Index W,
                                 const std::array<double, kSsimWindow>& g) {
  const Index Ho = H - kSsimWindow + 1, Wo = W - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(H * Wo));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        s += g[static_cast<std::size_t>(k)] * plane[static_cast<std::size_t>(y * W + x + k)];
      rows[static_cast<std::size_t>(y * Wo + x)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(Ho * Wo));
  for (Index y = 0; y < Ho; ++y)
    for (Index x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int k = 0; k < kSsimWindow; ++k)
        s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * Wo + x)];
      out[static_cast<std::size_t>(y * Wo + x)] = s;
    }
  return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& ref) {
  if (pred.shape() != ref.shape())
    throw DimensionError("ssim", "shapes " + to_string(pred.shape()) + " and " +
                                     to_string(ref.shape()) + " differ");
  if (pred.rank() != 3 && pred.rank() != 4)
    throw DimensionError("ssim", "expected [C,H,W] or [B,C,H,W], got " + to_string(pred.shape()));
  const Index H = pred.dim(-2), W = pred.dim(-1);
  if (H < kSsimWindow) throw DimensionError("ssim", "H", kSsimWindow, H);
  if (W < kSsimWindow) throw DimensionError("ssim", "W", kSsimWindow, W);
  const Index planes = pred.size() / (H * W);
  const auto g = gaussian_window();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  double total = 0.0;
  const std::size_t hw = static_cast<std::size_t>(H * W);
  std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
  for (Index p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < hw; ++i) {
      x[i] = static_cast<double>(pred[p * H * W + static_cast<Index>(i)]);
      y[i] = static_cast<double>(ref[p * H * W + static_cast<Index>(i)]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, H, W, g), my = filter_valid(y, H, W, g);
    const auto sxx = filter_valid(xx, H, W, g), syy = filter_valid(yy, H, W, g),
               sxy = filter_valid(xy, H, W, g);
    double plane_sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double mu_x = mx[i], mu_y = my[i];
      const double var_x = sxx[i] - mu_x * mu_x;
      const double var_y = syy[i] - mu_y * mu_y;
      const double cov = sxy[i] - mu_x * mu_y;
      const double num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
      const double den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
      plane_sum += num / den;
    }
    total += plane_sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(planes);
}

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["psnr_db"] = r.psnr_db;
  j["ssim"] = r.ssim;
  j["loss_total"] = r.loss_total;
  j["loss_p"] = r.loss_p;
  j["loss_c"] = r.loss_c;
  j["lr"] = r.lr;
  return j.dump();
}

#define ECAF_INSTANTIATE(T)                                                                     \
  template Var<T> charbonnier(const Var<T>&, const Var<T>&, T, Reduction);                      \
  template Var<T> l1_loss(const Var<T>&, const Var<T>&, Reduction);                             \
  template class FeatureNet<T>;                                                                 \
  template Var<T> perceptual(const Var<T>&, const Var<T>&, const FeatureNet<T>&,                \
                             std::vector<Var<T>>*);                                             \
  template LossTerms<T> total_loss(const Var<T>&, const Var<T>&, const LossWeights&,            \
                                   const FeatureNet<T>&);                                       \
  template double psnr(const Tensor<T>&, const Tensor<T>&);                                     \
  template double ssim(const Tensor<T>&, const Tensor<T>&);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
