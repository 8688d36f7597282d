// SPDX-License-Identifier: Apache-2.0
#include "ecaf/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ecaf/ops.hpp"

namespace ecaf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Adam

template <typename T>
AdamState<T>::AdamState(const ParamStore<T>& params, AdamConfig cfg) : config(cfg) {
  for (const auto& p : params) {
    m.emplace_back(p.value.shape());
    v.emplace_back(p.value.shape());
  }
}

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size())
    throw ConfigError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                      " parameters, store has " + std::to_string(params.size()));
  for (const auto& p : params)
    if (!p.has_grad) throw ConfigError("adam_step: parameter '" + p.name + "' has no gradient");
  ++state.step;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T correct1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
  const T correct2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
  const T rate = static_cast<T>(lr), eps = static_cast<T>(c.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<T>& p = params[k];
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (Index i = 0; i < p.value.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correct1;
      const T v_hat = v[i] / correct2;
      w[i] -= rate * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
  params.zero_grad();
}

// ---------------------------------------------------------------------------
// Schedule

void Schedule::validate() const {
  if (!(lr_start > 0.0)) throw ConfigError("lr_start must be > 0");
  if (!(lr_end >= 0.0)) throw ConfigError("lr_end must be >= 0");
  if (lr_end > lr_start) throw ConfigError("lr_end must not exceed lr_start");
  if (total_iters < 0) throw ConfigError("schedule length must be >= 0");
}

double cosine_lr(Index t, const Schedule& s) {
  if (t <= 0) return s.lr_start;
  if (t >= s.total_iters) return s.lr_end;
  const double phase = std::numbers::pi * static_cast<double>(t) / static_cast<double>(s.total_iters);
  return s.lr_end + 0.5 * (s.lr_start - s.lr_end) * (1.0 + std::cos(phase));
}

// ---------------------------------------------------------------------------
// Patches and augmentation

ImagePair sample_patch(const Tensor<float>& low, const Tensor<float>& ref, Index size, Rng& rng) {
  if (low.shape() != ref.shape())
    throw DimensionError("sample_patch", "low " + to_string(low.shape()) + " and ref " +
                                             to_string(ref.shape()) + " differ");
  if (low.rank() != 3) throw DimensionError("sample_patch", "rank", 3, low.rank());
  const Index C = low.dim(0), H = low.dim(1), W = low.dim(2);
  if (size < 1 || H < size || W < size)
    throw DimensionError("sample_patch", "image " + std::to_string(H) + "x" + std::to_string(W) +
                                             " is smaller than the " + std::to_string(size) +
                                             " patch; pass a smaller --patch or resize");
  const Index oy = rng.below(H - size + 1);
  const Index ox = rng.below(W - size + 1);
  ImagePair out{Tensor<float>({C, size, size}), Tensor<float>({C, size, size})};
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < size; ++y)
      for (Index x = 0; x < size; ++x) {
        const Index src = (c * H + oy + y) * W + ox + x;
        const Index dst = (c * size + y) * size + x;
        out.low[dst] = low[src];
        out.ref[dst] = ref[src];
      }
  return out;
}

Tensor<float> dihedral(const Tensor<float>& img, int k) {
  if (k < 0 || k > 7) throw ConfigError("dihedral index must lie in [0, 8)");
  if (img.rank() != 3) throw DimensionError("dihedral", "rank", 3, img.rank());
  const Index C = img.dim(0), H = img.dim(1), W = img.dim(2);
  const int turns = k % 4;
  const bool flip = k >= 4;
  if (turns % 2 == 1 && H != W)
    throw DimensionError("augment", "90/270 degree rotation needs a square patch, got " +
                                        std::to_string(H) + "x" + std::to_string(W));
  Tensor<float> out(img.shape());
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        // Output pixel (y, x) after the optional flip came from (y, xs) of the rotated image.
        const Index xs = flip ? W - 1 - x : x;
        // Source pixel before `turns` counter-clockwise quarter turns; H == W when turns is odd.
        Index sy = y, sx = xs;
        switch (turns) {
          case 1: sy = xs, sx = W - 1 - y; break;
          case 2: sy = H - 1 - y, sx = W - 1 - xs; break;
          case 3: sy = W - 1 - xs, sx = y; break;
          default: break;
        }
        out[(c * H + y) * W + x] = img[(c * H + sy) * W + sx];
      }
  return out;
}

int dihedral_inverse(int k) {
  if (k < 0 || k > 7) throw ConfigError("dihedral index must lie in [0, 8)");
  return k >= 4 ? k : (4 - k) % 4;
}

int draw_dihedral(Rng& rng) { return static_cast<int>(rng.below(8)); }

ImagePair augment(const ImagePair& pair, Rng& rng) {
  const int k = draw_dihedral(rng);
  return {dihedral(pair.low, k), dihedral(pair.ref, k)};
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

template <typename T>
Tensor<T> stack(const std::vector<Tensor<float>>& images) {
  const Shape& s = images.front().shape();
  Tensor<T> out({static_cast<Index>(images.size()), s[0], s[1], s[2]});
  Index off = 0;
  for (const auto& img : images)
    for (float v : img.values()) out[off++] = static_cast<T>(v);
  return out;
}

template <typename T>
double grad_norm(const ParamStore<T>& params) {
  double acc = 0.0;
  for (const auto& p : params)
    for (T g : p.grad.values()) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

template <typename T>
void scale_grads(ParamStore<T>& params, T factor) {
  for (auto& p : params)
    for (T& g : p.grad.values()) g *= factor;
}

std::string format_g(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Evaluation {
  double psnr_db = 0, ssim = 0;
};

template <typename T>
Evaluation evaluate(const Model<T>& model, const ImagePair& pair) {
  const Tensor<T> out = model.enhance(pair.low.template cast<T>());
  const Tensor<T> ref = pair.ref.template cast<T>();
  return {psnr(out, ref), ssim(out, ref)};
}

}  // namespace

template <typename T>
Checkpoint training_checkpoint(const Model<T>& model, const AdamState<T>& adam, Index iter,
                               const TrainOptions& opt) {
  Checkpoint ck = to_checkpoint(model);
  std::size_t k = 0;
  for (const auto& p : model.params()) {
    ck.tensors.emplace_back("adam.m/" + p.name, adam.m[k].template cast<float>());
    ck.tensors.emplace_back("adam.v/" + p.name, adam.v[k].template cast<float>());
    ++k;
  }
  ck.state = {{"iter", std::to_string(iter)},
              {"adam_step", std::to_string(adam.step)},
              {"seed", std::to_string(opt.seed)},
              {"batch", std::to_string(opt.batch)},
              {"patch", std::to_string(opt.patch)},
              {"schedule_iters", std::to_string(opt.schedule.total_iters)},
              {"lr_start", format_g(opt.schedule.lr_start)},
              {"lr_end", format_g(opt.schedule.lr_end)},
              {"lambda", format_g(opt.weights.lambda)},
              {"epsilon", format_g(opt.weights.epsilon)},
              {"loss", opt.weights.l1_only ? "l1" : "composite"},
              {"augment", opt.augment ? "true" : "false"}};
  return ck;
}

template <typename T>
TrainReport train(Model<T>& model, const std::vector<ImagePair>& data, const TrainOptions& opt,
                  const FeatureNet<T>& net,
                  const std::function<void(const MetricsRecord&)>& on_log) {
  if (data.empty()) throw ConfigError("train: dataset is empty");
  if (opt.iters < 0) throw ConfigError("iters must be >= 0");
  if (opt.batch < 1) throw ConfigError("batch must be >= 1");
  if (opt.log_every < 1) throw ConfigError("log_every must be >= 1");
  if (opt.ckpt_every < 1) throw ConfigError("ckpt_every must be >= 1");
  if (opt.clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
  if (opt.val_index < 0 || opt.val_index >= static_cast<Index>(data.size()))
    throw ConfigError("val_index out of range");
  opt.schedule.validate();
  opt.weights.validate();
  for (const auto& pair : data)
    if (pair.low.dim(1) < opt.patch || pair.low.dim(2) < opt.patch)
      throw DimensionError("train", "image " + to_string(pair.low.shape()) +
                                        " is smaller than the " + std::to_string(opt.patch) +
                                        " patch; pass a smaller --patch or resize");

  const auto t_start = std::chrono::steady_clock::now();
  AdamState<T> adam(model.params());
  Index start_iter = 0;
  if (!opt.resume_from.empty()) {
    const Checkpoint ck = Checkpoint::load(opt.resume_from);
    Model<T> restored = model_from_checkpoint<T>(ck, &model.config());
    model = std::move(restored);
    adam = AdamState<T>(model.params());
    std::size_t k = 0;
    for (const auto& p : model.params()) {
      const Tensor<float>* m = ck.find("adam.m/" + p.name);
      const Tensor<float>* v = ck.find("adam.v/" + p.name);
      if (!m || !v) throw FormatError(opt.resume_from + ": no optimizer state for '" + p.name + "'");
      adam.m[k] = m->template cast<T>();
      adam.v[k] = v->template cast<T>();
      ++k;
    }
    const std::string* iter = ck.state_value("iter");
    const std::string* step = ck.state_value("adam_step");
    if (!iter || !step) throw FormatError(opt.resume_from + ": missing loop state");
    start_iter = std::stoll(*iter);
    adam.step = std::stoll(*step);
  }

  std::ofstream log_file;
  if (!opt.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(opt.out_dir, ec);
    if (ec) throw IoError("cannot create " + opt.out_dir + ": " + ec.message());
    const auto log_path = fs::path(opt.out_dir) / kTrainLogName;
    log_file.open(log_path, start_iter > 0 ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open " + log_path.string());
  }

  TrainReport report;
  report.iter = start_iter;
  const ImagePair& val = data[static_cast<std::size_t>(opt.val_index)];

  auto emit = [&](Index iter, double lr, double total, double lp, double lc) {
    const Evaluation ev = evaluate(model, val);
    MetricsRecord rec{iter, ev.psnr_db, ev.ssim, total, lp, lc, lr};
    report.psnr_db = ev.psnr_db;
    report.ssim = ev.ssim;
    if (log_file) {
      log_file << to_json_line(rec) << '\n';
      log_file.flush();
    }
    if (on_log) on_log(rec);
  };

  auto save_ckpt = [&](Index iter, const std::string& name) {
    if (opt.out_dir.empty()) return;
    const std::string path = (fs::path(opt.out_dir) / name).string();
    training_checkpoint(model, adam, iter, opt).save(path);
    report.last_checkpoint = path;
  };

  if (start_iter == 0) {
    // Initial record: losses of the untouched model on the validation pair.
    Tape<T> tape;
    const Tensor<T> low = stack<T>({val.low});
    const Var<T> pred = model.forward(tape, low);
    const Var<T> ref = tape.leaf(stack<T>({val.ref}));
    const LossTerms<T> terms = total_loss(pred, ref, opt.weights, net);
    const double lp = terms.perceptual.valid() ? static_cast<double>(terms.perceptual.value().item()) : 0.0;
    report.loss_total = static_cast<double>(terms.total.value().item());
    report.loss_p = lp;
    report.loss_c = static_cast<double>(terms.pixel.value().item());
    report.lr = cosine_lr(0, opt.schedule);
    emit(0, report.lr, report.loss_total, report.loss_p, report.loss_c);
  }

  const Rng root(opt.seed);
  const Rng data_root = root.split("data");
  const Rng aug_root = root.split("augment");
  for (Index it = start_iter; it < opt.iters; ++it) {
    const double lr = cosine_lr(it, opt.schedule);
    Rng data_rng = data_root.split(static_cast<std::uint64_t>(it));
    Rng aug_rng = aug_root.split(static_cast<std::uint64_t>(it));
    std::vector<Tensor<float>> lows, refs;
    for (Index b = 0; b < opt.batch; ++b) {
      const ImagePair& src = data[static_cast<std::size_t>(data_rng.below(static_cast<Index>(data.size())))];
      ImagePair patch = sample_patch(src.low, src.ref, opt.patch, data_rng);
      if (opt.augment) patch = augment(patch, aug_rng);
      lows.push_back(std::move(patch.low));
      refs.push_back(std::move(patch.ref));
    }

    double total = 0, lp = 0, lc = 0;
    try {
      Tape<T> tape;
      const Var<T> pred = model.forward(tape, stack<T>(lows));
      const Var<T> ref = tape.leaf(stack<T>(refs));
      const LossTerms<T> terms = total_loss(pred, ref, opt.weights, net);
      total = static_cast<double>(terms.total.value().item());
      lp = terms.perceptual.valid() ? static_cast<double>(terms.perceptual.value().item()) : 0.0;
      lc = static_cast<double>(terms.pixel.value().item());
      tape.backward(terms.total);
    } catch (const NumericError& e) {
      throw TrainingError("non-finite value at iteration " + std::to_string(it + 1) +
                          " (lr " + format_g(lr) + "): " + e.what());
    }
    if (!std::isfinite(total))
      throw TrainingError("non-finite loss at iteration " + std::to_string(it + 1) + " (lr " +
                          format_g(lr) + ")");
    if (opt.clip_norm > 0) {
      const double norm = grad_norm(model.params());
      if (norm > opt.clip_norm) scale_grads(model.params(), static_cast<T>(opt.clip_norm / norm));
    }
    adam_step(model.params(), adam, lr);

    const Index done = it + 1;
    report.iter = done;
    report.loss_total = total;
    report.loss_p = lp;
    report.loss_c = lc;
    report.lr = lr;
    report.loss_history.push_back(total);
    if (done % opt.log_every == 0 || done == opt.iters) emit(done, lr, total, lp, lc);
    if (done % opt.ckpt_every == 0 && done != opt.iters) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%06lld.ecak", static_cast<long long>(done));
      save_ckpt(done, name);
    }
  }
  save_ckpt(report.iter, kFinalCheckpointName);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

#define ECAF_INSTANTIATE(T)                                                                   \
  template struct AdamState<T>;                                                               \
  template void adam_step(ParamStore<T>&, AdamState<T>&, double);                             \
  template Checkpoint training_checkpoint(const Model<T>&, const AdamState<T>&, Index,        \
                                          const TrainOptions&);                               \
  template TrainReport train(Model<T>&, const std::vector<ImagePair>&, const TrainOptions&,   \
                             const FeatureNet<T>&,                                            \
                             const std::function<void(const MetricsRecord&)>&);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
