// SPDX-License-Identifier: Apache-2.0
#include "ecaf/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>

#include "ecaf/data_io.hpp"
#include "ecaf/network.hpp"
#include "ecaf/objectives.hpp"
#include "ecaf/training.hpp"
#include "ecaf/verify.hpp"

namespace ecaf::cli {
namespace {

namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;
using json = nlohmann::json;

/// Bad flag values found after CLI11 has accepted the syntax.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename... Args>
std::string format(const char* f, Args... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(clk::time_point t0) {
  return std::chrono::duration<double>(clk::now() - t0).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<Index> parse_index_list(const std::string& flag, const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    Index v = 0;
    std::size_t used = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size() || v < 1)
      throw UsageError(flag + ": expected positive integers separated by commas, got '" + text + "'");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(flag + ": empty list");
  return out;
}

// Full-scale training settings, shown next to the desk defaults.
constexpr Index kFullScaleIters = 250000;
constexpr Index kFullScaleBatch = 8;
constexpr Index kFullScalePatch = 256;

constexpr const char* kAblations[] = {"no-vsf", "no-dmsa", "l1-only"};

// ---------------------------------------------------------------------------
// Flag sources: command line > config file > ECAF_SEED > built-in default.

void apply_config_file(CLI::App& cmd, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  for (const auto& [key, value] : parse_config_text(buf.str(), path)) {
    CLI::Option* opt = key == "config" ? nullptr : cmd.get_option_no_throw("--" + key);
    if (!opt)
      throw UsageError(path + ": unknown key '" + key + "' for '" + cmd.get_name() + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void apply_seed_env(CLI::App& cmd) {
  CLI::Option* opt = cmd.get_option_no_throw("--seed");
  const char* env = std::getenv("ECAF_SEED");
  if (!opt || opt->count() > 0 || !env) return;
  opt->add_result(env);
  try {
    opt->run_callback();
  } catch (const CLI::Error&) {
    throw UsageError(std::string("ECAF_SEED: expected an unsigned integer, got '") + env + "'");
  }
}

/// One subcommand: flags, a validation step that may only throw usage errors
/// (exit 2), and the work itself (exit 1 on failure).
class Command {
 public:
  virtual ~Command() = default;
  virtual void prepare() {}
  virtual int execute(std::ostream& out, std::ostream& err) = 0;

  /// Marks a flag as mandatory. The check runs after the config file and
  /// environment are applied, so either source may supply it.
  CLI::Option* require(CLI::Option* opt) {
    required_.push_back(opt);
    return opt->type_name(opt->get_type_name() + " REQUIRED");
  }
  void check_required() const {
    for (const CLI::Option* opt : required_)
      if (opt->count() == 0) throw CLI::RequiredError(opt->get_name());
  }

  CLI::App* app = nullptr;
  std::string config_path;

 private:
  std::vector<CLI::Option*> required_;
};

void add_common(Command& c) {
  c.app->add_option("--config", c.config_path,
                    "key=value file supplying any flag of this subcommand (by long name); "
                    "command-line flags take precedence")
      ->check(CLI::ExistingFile);
}

void add_seed(CLI::App& app, std::uint64_t& seed) {
  app.add_option("--seed", seed, "Random seed; falls back to $ECAF_SEED, then 0")->capture_default_str();
}

// ---------------------------------------------------------------------------
// synth

class SynthCommand : public Command {
 public:
  explicit SynthCommand(CLI::App& parent) {
    app = parent.add_subcommand("synth", "Generate a synthetic paired low/normal-light dataset");
    app->add_option("--n", opt_.pairs, "Number of image pairs")->capture_default_str();
    app->add_option("--size", opt_.size, "Side length of the square images")->capture_default_str();
    add_seed(*app, opt_.seed);
    require(app->add_option("--out", out_dir_, "Output directory (receives images and manifest.tsv)"));
    app->add_flag("--force", opt_.force, "Write into a non-empty output directory");
    app->add_option("--gamma", opt_.degrade.gamma, "Degradation gamma (>= 1)")->capture_default_str();
    app->add_option("--gain", opt_.degrade.gain, "Degradation gain in (0, 1]")->capture_default_str();
    app->add_option("--noise", opt_.degrade.noise_sigma, "Gaussian noise sigma (>= 0)")->capture_default_str();
    add_common(*this);
  }

  void prepare() override {
    if (opt_.pairs < 0) throw UsageError("--n must be >= 0");
    if (opt_.size < 1) throw UsageError("--size must be >= 1");
    opt_.degrade.validate();
  }

  int execute(std::ostream& out, std::ostream&) override {
    build_synth_dataset(opt_, out_dir_);
    out << (fs::path(out_dir_) / kManifestName).string() << "\n";
    return kOk;
  }

 private:
  SynthOptions opt_;
  std::string out_dir_;
};

// ---------------------------------------------------------------------------
// train

class TrainCommand : public Command {
 public:
  explicit TrainCommand(CLI::App& parent) {
    app = parent.add_subcommand("train", "Train a model on a manifest of image pairs");
    opt_.out_dir = "run";
    require(app->add_option("--manifest", manifest_, "Pair manifest (low<TAB>ref per line)"));
    app->add_option("--out", opt_.out_dir, "Run directory for checkpoints and train_log.jsonl")
        ->capture_default_str();
    app->add_option("--iters", opt_.iters, format("Training iterations [desk 2000; full-scale %lld]",
                                                  static_cast<long long>(kFullScaleIters)))
        ->capture_default_str();
    app->add_option("--batch", opt_.batch, format("Patches per iteration [desk 2; full-scale %lld]",
                                                  static_cast<long long>(kFullScaleBatch)))
        ->capture_default_str();
    app->add_option("--patch", opt_.patch, format("Square crop size [desk 64; full-scale %lld]",
                                                  static_cast<long long>(kFullScalePatch)))
        ->capture_default_str();
    app->add_option("--lr-start", opt_.schedule.lr_start, "Initial learning rate [desk and full-scale 2e-4]")
        ->capture_default_str();
    app->add_option("--lr-end", opt_.schedule.lr_end, "Final learning rate [desk and full-scale 1e-6]")
        ->capture_default_str();
    sched_iters_opt_ = app->add_option("--sched-iters", opt_.schedule.total_iters,
                                       "Cosine schedule length; defaults to --iters");
    app->add_option("--lambda", opt_.weights.lambda, "Perceptual weight; the pixel term gets 1 - lambda")
        ->capture_default_str();
    app->add_option("--epsilon", opt_.weights.epsilon, "Charbonnier epsilon")->capture_default_str();
    app->add_option("--pixel-reduction", pixel_reduction_, "Pixel loss reduction")
        ->check(CLI::IsMember({"sum", "mean"}))
        ->capture_default_str();
    app->add_option("--c0", model_.base_channels, "Base channel width")->capture_default_str();
    app->add_option("--heads", heads_, "Heads per scale: one value for all scales or a comma list")
        ->capture_default_str();
    app->add_option("--stages", model_.stages, "Encoder down-sampling stages")->capture_default_str();
    app->add_option("--blocks", model_.bottleneck_blocks, "Attention blocks at the bottleneck")
        ->capture_default_str();
    app->add_flag("--layer-norm", model_.layer_norm, "Normalize tokens before each attention block");
    app->add_flag("--no-posemb", no_posemb_, "Disable the convolutional position embedding");
    app->add_flag("--primed-mid", model_.use_primed_mid, "Fuse the updated middle features in the second cross step");
    app->add_option("--ablate", ablate_, "Ablation (repeatable): no-vsf, no-dmsa (plain MHSA), l1-only (plain L1 loss)")
        ->check(CLI::IsMember({kAblations[0], kAblations[1], kAblations[2]}))
        ->delimiter(',');
    add_seed(*app, opt_.seed);
    app->add_option("--clip-norm", opt_.clip_norm, "Global gradient-norm clip; 0 disables")->capture_default_str();
    app->add_option("--log-every", opt_.log_every, "Iterations between metric records")->capture_default_str();
    app->add_option("--ckpt-every", opt_.ckpt_every, "Iterations between checkpoints")->capture_default_str();
    app->add_option("--val-index", opt_.val_index, "Manifest pair used for logged PSNR/SSIM")->capture_default_str();
    app->add_flag("--no-augment", no_augment_, "Disable random rotations and flips");
    app->add_option("--resume", opt_.resume_from, "Continue from a training checkpoint")->check(CLI::ExistingFile);
    app->add_option("--feature-net", feature_net_path_, "Checkpoint with perceptual feature-net weights")
        ->check(CLI::ExistingFile);
    add_common(*this);
  }

  void prepare() override {
    if (sched_iters_opt_->count() == 0) opt_.schedule.total_iters = opt_.iters;
    opt_.augment = !no_augment_;
    opt_.weights.pixel_reduction = pixel_reduction_ == "mean" ? Reduction::mean : Reduction::sum;
    model_.posemb = !no_posemb_;
    model_.seed = opt_.seed;
    std::vector<Index> heads = parse_index_list("--heads", heads_);
    if (heads.size() == 1) heads.assign(static_cast<std::size_t>(std::max<Index>(model_.stages, 0) + 1), heads[0]);
    model_.heads = heads;
    for (const auto& a : ablate_) {
      if (a == "no-vsf") model_.vsf = false;
      else if (a == "no-dmsa") model_.attention = AttentionKind::mhsa;
      else if (a == "l1-only") opt_.weights.l1_only = true;
    }
    if (opt_.iters < 0) throw UsageError("--iters must be >= 0");
    if (opt_.batch < 1) throw UsageError("--batch must be >= 1");
    if (opt_.patch < 1) throw UsageError("--patch must be >= 1");
    if (opt_.log_every < 1) throw UsageError("--log-every must be >= 1");
    if (opt_.ckpt_every < 1) throw UsageError("--ckpt-every must be >= 1");
    if (opt_.clip_norm < 0) throw UsageError("--clip-norm must be >= 0");
    model_.validate();
    opt_.schedule.validate();
    opt_.weights.validate();
  }

  int execute(std::ostream& out, std::ostream& err) override {
    out << format("desk defaults: iters 2000, batch 2, patch 64 | full-scale: iters %lld, batch %lld, patch %lld\n",
                  static_cast<long long>(kFullScaleIters), static_cast<long long>(kFullScaleBatch),
                  static_cast<long long>(kFullScalePatch));
    out << format("settings: iters %lld, batch %lld, patch %lld, lr %g -> %g over %lld, lambda %g, epsilon %g, ",
                  static_cast<long long>(opt_.iters), static_cast<long long>(opt_.batch),
                  static_cast<long long>(opt_.patch), opt_.schedule.lr_start, opt_.schedule.lr_end,
                  static_cast<long long>(opt_.schedule.total_iters), opt_.weights.lambda, opt_.weights.epsilon)
        << "loss " << (opt_.weights.l1_only ? "l1" : "composite") << ", seed " << opt_.seed << "\n";
    out << "model:";
    for (const auto& [k, v] : model_.to_key_values()) out << " " << k << "=" << v;
    out << "\n";

    const std::vector<ImagePair> data = load_pairs(PairManifest::load(manifest_));
    if (data.empty()) throw ConfigError(manifest_ + ": manifest lists no pairs");
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Index h = data[i].low.dim(1), w = data[i].low.dim(2);
      if (opt_.patch > h || opt_.patch > w)
        throw UsageError(format("--patch %lld exceeds pair %zu (%lldx%lld); pass a smaller --patch or resize",
                                static_cast<long long>(opt_.patch), i, static_cast<long long>(h),
                                static_cast<long long>(w)));
    }
    if (opt_.val_index < 0 || opt_.val_index >= static_cast<Index>(data.size()))
      throw UsageError("--val-index out of range");

    const FeatureNet<float> net = feature_net_path_.empty()
                                      ? FeatureNet<float>()
                                      : FeatureNet<float>::from_checkpoint(Checkpoint::load(feature_net_path_));
    Model<float> model(model_);
    out << "parameters: " << model.params().count() << "\n";
    const TrainReport report = train(model, data, opt_, net, [&](const MetricsRecord& r) {
      out << to_json_line(r) << "\n" << std::flush;
    });
    out << format("done: %lld iterations in %.1f s\n", static_cast<long long>(report.iter), report.wall_seconds);
    if (!report.last_checkpoint.empty()) out << "checkpoint: " << report.last_checkpoint << "\n";
    (void)err;
    return kOk;
  }

 private:
  TrainOptions opt_;
  ModelConfig model_;
  std::string manifest_;
  std::string heads_ = "2";
  std::string pixel_reduction_ = "sum";
  std::vector<std::string> ablate_;
  std::string feature_net_path_;
  bool no_augment_ = false;
  bool no_posemb_ = false;
  CLI::Option* sched_iters_opt_ = nullptr;
};

// ---------------------------------------------------------------------------
// enhance

std::vector<std::pair<fs::path, fs::path>> enhance_jobs(const fs::path& in, const fs::path& out) {
  if (!fs::is_directory(in)) return {{in, out}};
  std::vector<fs::path> inputs;
  for (const auto& entry : fs::directory_iterator(in)) {
    const std::string ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".png")) inputs.push_back(entry.path());
  }
  std::sort(inputs.begin(), inputs.end());
  std::vector<std::pair<fs::path, fs::path>> jobs;
  for (const auto& p : inputs) jobs.emplace_back(p, out / p.filename());
  return jobs;
}

class EnhanceCommand : public Command {
 public:
  explicit EnhanceCommand(CLI::App& parent) {
    app = parent.add_subcommand("enhance", "Enhance an image (or every .ppm/.png in a directory)");
    require(app->add_option("--ckpt", ckpt_, "Model checkpoint"));
    require(app->add_option("--in", in_, "Input image or directory"));
    require(app->add_option("--out", out_, "Output image, or directory when --in is a directory"));
    c0_ = app->add_option("--c0", expect_c0_, "Expected base width; a mismatch with the checkpoint is an error");
    heads_ = app->add_option("--heads", expect_heads_, "Expected heads (single value or comma list)");
    stages_ = app->add_option("--stages", expect_stages_, "Expected encoder stages");
    app->add_option("--ablate", expect_ablate_, "Expected ablations: no-vsf, no-dmsa")
        ->check(CLI::IsMember({kAblations[0], kAblations[1]}))
        ->delimiter(',');
    add_common(*this);
  }

  int execute(std::ostream& out, std::ostream&) override {
    if (!fs::exists(in_)) throw IoError("input not found: " + in_);
    const Checkpoint ck = Checkpoint::load(ckpt_);
    ModelConfig expected = ModelConfig::from_key_values(ck.config);
    if (c0_->count()) expected.base_channels = expect_c0_;
    if (stages_->count()) expected.stages = expect_stages_;
    if (heads_->count()) {
      std::vector<Index> h = parse_index_list("--heads", expect_heads_);
      if (h.size() == 1) h.assign(static_cast<std::size_t>(expected.stages + 1), h[0]);
      expected.heads = h;
    }
    for (const auto& a : expect_ablate_) {
      if (a == "no-vsf") expected.vsf = false;
      else if (a == "no-dmsa") expected.attention = AttentionKind::mhsa;
    }
    const Model<float> model = model_from_checkpoint<float>(ck, &expected);

    const auto jobs = enhance_jobs(in_, out_);
    if (fs::is_directory(in_)) fs::create_directories(out_);
    for (const auto& [src, dst] : jobs) {
      const Tensor<float> img = load_image(src.string());
      const auto t0 = clk::now();
      const Tensor<float> result = model.enhance(img);
      const double ms = 1e3 * seconds_since(t0);
      save_image(result, dst.string());
      out << format("%s -> %s  %lldx%lld  %.1f ms\n", src.string().c_str(), dst.string().c_str(),
                    static_cast<long long>(img.dim(2)), static_cast<long long>(img.dim(1)), ms);
    }
    return kOk;
  }

 private:
  std::string ckpt_, in_, out_;
  Index expect_c0_ = 0, expect_stages_ = 0;
  std::string expect_heads_;
  std::vector<std::string> expect_ablate_;
  CLI::Option *c0_ = nullptr, *heads_ = nullptr, *stages_ = nullptr;
};

// ---------------------------------------------------------------------------
// eval

class EvalCommand : public Command {
 public:
  explicit EvalCommand(CLI::App& parent) {
    app = parent.add_subcommand("eval", "Report PSNR/SSIM per pair and on average");
    require(app->add_option("--manifest", manifest_, "Pair manifest"));
    app->add_option("--ckpt", ckpt_, "Model checkpoint; without it the low images are scored as-is");
    app->add_option("--json", json_path_, "Also write the JSON report to this file");
    add_common(*this);
  }

  int execute(std::ostream& out, std::ostream&) override {
    const PairManifest manifest = PairManifest::load(manifest_);
    const std::vector<ImagePair> data = load_pairs(manifest);
    std::unique_ptr<Model<float>> model;
    if (!ckpt_.empty()) model = std::make_unique<Model<float>>(load_model<float>(ckpt_));

    json report;
    report["checkpoint"] = ckpt_.empty() ? json(nullptr) : json(ckpt_);
    report["pairs"] = json::array();
    out << format("%-5s %-32s %10s %8s\n", "pair", "low", "psnr_db", "ssim");
    double sum_psnr = 0, sum_ssim = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Tensor<float> pred = model ? model->enhance(data[i].low) : data[i].low;
      const double p = psnr(pred, data[i].ref), s = ssim(pred, data[i].ref);
      sum_psnr += p;
      sum_ssim += s;
      out << format("%-5zu %-32s %10.4f %8.4f\n", i, manifest.pairs[i].low.c_str(), p, s);
      report["pairs"].push_back({{"index", i}, {"low", manifest.pairs[i].low}, {"ref", manifest.pairs[i].ref},
                                 {"psnr_db", p}, {"ssim", s}});
    }
    const double n = static_cast<double>(std::max<std::size_t>(data.size(), 1));
    const double mean_psnr = sum_psnr / n, mean_ssim = sum_ssim / n;
    out << format("%-5s %-32s %10.4f %8.4f\n", "mean", "", mean_psnr, mean_ssim);
    report["mean"] = {{"psnr_db", mean_psnr}, {"ssim", mean_ssim}};
    report["count"] = data.size();
    out << report.dump() << "\n";
    if (!json_path_.empty()) {
      std::ofstream f(json_path_);
      if (!(f << report.dump(2) << "\n")) throw IoError("cannot write " + json_path_);
    }
    return kOk;
  }

 private:
  std::string manifest_, ckpt_, json_path_;
};

// ---------------------------------------------------------------------------
// verify

class VerifyCommand : public Command {
 public:
  explicit VerifyCommand(CLI::App& parent) {
    app = parent.add_subcommand("verify", "Run the property and acceptance checks");
    app->add_flag("--plant-grad-bug", opt_.plant_grad_bug, "Corrupt the conv2d weight gradient (harness self-test)");
    add_seed(*app, opt_.seed);
    app->add_flag("--all", all_, "Include the training criteria (several minutes)");
    app->add_option("--criteria", ids_, "Run only these criteria (comma list of ids)")->delimiter(',');
    app->add_option("--work-dir", opt_.work_dir, "Keep scratch files here instead of a temporary directory");
    add_common(*this);
  }

  void prepare() override {
    for (int id : ids_) {
      const auto& all = verify::criteria();
      if (std::none_of(all.begin(), all.end(), [id](const verify::Criterion& c) { return c.id == id; }))
        throw UsageError("--criteria: no criterion " + std::to_string(id));
    }
  }

  int execute(std::ostream& out, std::ostream&) override {
    std::vector<int> ids = ids_;
    if (ids.empty()) {
      if (all_)
        for (const auto& c : verify::criteria()) ids.push_back(c.id);
      else
        ids = verify::quick_ids();
    }
    verify::Options opt = opt_;
    opt.on_check = [&](const verify::Check& c) {
      out << "  " << (c.passed ? "pass" : "FAIL") << "  " << c.name;
      if (!c.detail.empty()) out << ": " << c.detail;
      out << "\n" << std::flush;
    };
    bool all_passed = true;
    for (int id : ids) {
      const auto& info = *std::find_if(verify::criteria().begin(), verify::criteria().end(),
                                       [id](const verify::Criterion& c) { return c.id == id; });
      out << "criterion " << id << ": " << info.title << "\n" << std::flush;
      const verify::CriterionResult r = verify::run_criterion(id, opt);
      out << format("%s criterion %d: %s (%.1f s)\n", r.passed ? "PASS" : "FAIL", r.id, r.title.c_str(),
                    r.seconds)
          << std::flush;
      all_passed = all_passed && r.passed;
    }
    out << (all_passed ? "all checks passed\n" : "some checks failed\n");
    return all_passed ? kOk : kRuntimeError;
  }

 private:
  verify::Options opt_;
  std::vector<int> ids_;
  bool all_ = false;
};

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text,
                                                                   const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  for (int number = 1; std::getline(ss, line); ++number) {
    const std::string body = trim(line);
    if (body.empty() || body[0] == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw UsageError(source + ":" + std::to_string(number) + ": expected key=value");
    std::string key = trim(body.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    if (key.empty()) throw UsageError(source + ":" + std::to_string(number) + ": empty key");
    out.emplace_back(key, trim(body.substr(eq + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-light image enhancement with dual multi-head self-attention", "ecaformer"};
  app.require_subcommand(1);
  app.get_formatter()->column_width(34);

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(std::make_unique<SynthCommand>(app));
  commands.push_back(std::make_unique<TrainCommand>(app));
  commands.push_back(std::make_unique<EnhanceCommand>(app));
  commands.push_back(std::make_unique<EvalCommand>(app));
  commands.push_back(std::make_unique<VerifyCommand>(app));

  auto usage = [&](const std::string& message) {
    err << "error: " << message << "\n\n" << app.help();
    return kUsageError;
  };

  Command* selected = nullptr;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    for (auto& c : commands)
      if (c->app->parsed()) selected = c.get();
    if (!selected->config_path.empty()) apply_config_file(*selected->app, selected->config_path);
    apply_seed_env(*selected->app);
    selected->check_required();
    selected->prepare();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::Error& e) {
    return usage(e.what());
  } catch (const std::invalid_argument& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }

  try {
    return selected->execute(out, err);
  } catch (const UsageError& e) {
    return usage(e.what());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace ecaf::cli
