// SPDX-License-Identifier: Apache-2.0
#include "ecaf/data_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ecaf/log.hpp"

namespace ecaf {

namespace fs = std::filesystem;

namespace {

enum class ImageFormat { ppm, png };

ImageFormat format_for(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".ppm") return ImageFormat::ppm;
  if (ext == ".png") return ImageFormat::png;
  throw FormatError(path + ": unsupported image extension '" + ext + "' (use .ppm or .png)");
}

Tensor<float> from_interleaved(const std::vector<std::uint8_t>& rgb, Index H, Index W) {
  Tensor<float> t({3, H, W});
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c)
        t[(c * H + y) * W + x] =
            static_cast<float>(rgb[static_cast<std::size_t>((y * W + x) * 3 + c)]) / 255.0f;
  return t;
}

std::vector<std::uint8_t> to_interleaved(const Tensor<float>& t, const std::string& path) {
  if (t.rank() != 3 || t.dim(0) != 3)
    throw DimensionError("save_image", "expected [3,H,W], got " + to_string(t.shape()));
  const Index H = t.dim(1), W = t.dim(2);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(H * W * 3));
  bool clamped = false;
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x)
      for (Index c = 0; c < 3; ++c) {
        const float v = t[(c * H + y) * W + x];
        if (!(v >= 0.0f && v <= 1.0f)) clamped = true;
        rgb[static_cast<std::size_t>((y * W + x) * 3 + c)] = quantize_unit(v);
      }
  if (clamped) warn(path + ": values outside [0,1] were clamped");
  return rgb;
}

// ---- PPM

// Reads one header token, skipping whitespace and '#' comments.
std::string ppm_token(std::istream& is, const std::string& path) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  if (tok.empty()) throw IoError(path + ": truncated PPM header");
  return tok;
}

Index ppm_number(std::istream& is, const std::string& path, const char* field) {
  const std::string tok = ppm_token(is, path);
  Index v = 0;
  for (char c : tok) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw FormatError(path + ": PPM " + field + " is not a number ('" + tok + "')");
    v = v * 10 + (c - '0');
    if (v > (Index{1} << 30)) throw FormatError(path + ": PPM " + field + " is too large");
  }
  return v;
}

Tensor<float> load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  const std::string magic = ppm_token(is, path);
  if (magic != "P6") throw FormatError(path + ": PPM magic '" + magic + "' unsupported (need P6)");
  const Index W = ppm_number(is, path, "width");
  const Index H = ppm_number(is, path, "height");
  const Index maxval = ppm_number(is, path, "maxval");
  if (W < 1 || H < 1) throw FormatError(path + ": PPM width/height must be positive");
  if (maxval != 255)
    throw FormatError(path + ": PPM maxval " + std::to_string(maxval) +
                      " unsupported (bit depth must be 8, maxval 255)");
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(W * H * 3));
  is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (is.gcount() != static_cast<std::streamsize>(rgb.size()))
    throw IoError(path + ": truncated PPM payload (" + std::to_string(is.gcount()) + " of " +
                  std::to_string(rgb.size()) + " bytes)");
  return from_interleaved(rgb, H, W);
}

void save_ppm(const std::vector<std::uint8_t>& rgb, Index H, Index W, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "P6\n" << W << ' ' << H << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw IoError("failed writing " + path);
}

// ---- PNG

void check_png_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  unsigned char head[26];
  is.read(reinterpret_cast<char*>(head), sizeof head);
  if (is.gcount() != static_cast<std::streamsize>(sizeof head))
    throw IoError(path + ": truncated PNG header");
  static constexpr unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (!std::equal(sig, sig + 8, head)) throw FormatError(path + ": not a PNG file (bad signature)");
  if (std::string(reinterpret_cast<char*>(head + 12), 4) != "IHDR")
    throw FormatError(path + ": PNG lacks a leading IHDR chunk");
  const int bit_depth = head[24];
  const int color_type = head[25];
  if (bit_depth != 8)
    throw FormatError(path + ": PNG bit depth " + std::to_string(bit_depth) +
                      " unsupported (8-bit truecolor only)");
  if (color_type != 2)
    throw FormatError(path + ": PNG color type " + std::to_string(color_type) +
                      " unsupported (8-bit truecolor, color type 2, only)");
}

Tensor<float> load_png(const std::string& path) {
  check_png_header(path);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw IoError(path + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw IoError(path + ": " + msg);
  }
  return from_interleaved(rgb, static_cast<Index>(img.height), static_cast<Index>(img.width));
}

void save_png(const std::vector<std::uint8_t>& rgb, Index H, Index W, const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(W);
  img.height = static_cast<png_uint_32>(H);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw IoError(path + ": " + img.message);
}

}  // namespace

std::uint8_t quantize_unit(float v) {
  const float c = v >= 0.0f ? (v <= 1.0f ? v : 1.0f) : 0.0f;  // NaN maps to 0
  return static_cast<std::uint8_t>(std::floor(static_cast<double>(c) * 255.0 + 0.5));
}

Tensor<float> load_image(const std::string& path) {
  return format_for(path) == ImageFormat::ppm ? load_ppm(path) : load_png(path);
}

void save_image(const Tensor<float>& image, const std::string& path) {
  const ImageFormat fmt = format_for(path);
  const std::vector<std::uint8_t> rgb = to_interleaved(image, path);
  if (fmt == ImageFormat::ppm)
    save_ppm(rgb, image.dim(1), image.dim(2), path);
  else
    save_png(rgb, image.dim(1), image.dim(2), path);
}

// ---------------------------------------------------------------------------
// Synthetic data

void DegradeParams::validate() const {
  if (!(gamma >= 1.0)) throw ConfigError("gamma must be >= 1, got " + std::to_string(gamma));
  if (!(gain > 0.0 && gain <= 1.0))
    throw ConfigError("gain must lie in (0, 1], got " + std::to_string(gain));
  if (!(noise_sigma >= 0.0))
    throw ConfigError("noise_sigma must be >= 0, got " + std::to_string(noise_sigma));
}

Tensor<float> synth_degrade(const Tensor<float>& ref, const DegradeParams& p) {
  p.validate();
  Rng rng = Rng(p.seed).split("degrade_noise");
  Tensor<float> low(ref.shape());
  for (Index i = 0; i < ref.size(); ++i) {
    double v = p.gain * std::pow(static_cast<double>(ref[i]), p.gamma);
    if (p.noise_sigma > 0.0) v += rng.normal(0.0, p.noise_sigma);
    low[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return low;
}

Tensor<float> synth_reference(Index size, Rng& rng) {
  if (size < 1) throw ConfigError("size must be >= 1");
  Tensor<float> img({3, size, size});
  const double n = static_cast<double>(size);
  // Smooth gradient between two colors along a random direction.
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.15, 0.85);
    c1[c] = rng.uniform(0.15, 0.85);
  }
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * ((x / n - 0.5) * dx + (y / n - 0.5) * dy) * 1.4142;
      for (int c = 0; c < 3; ++c)
        img[(c * size + y) * size + x] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
    }
  // Rectangles blended over the gradient.
  const Index rects = 3 + rng.below(4);
  for (Index r = 0; r < rects; ++r) {
    const Index w = 2 + rng.below(std::max<Index>(1, size / 2));
    const Index h = 2 + rng.below(std::max<Index>(1, size / 2));
    const Index x0 = rng.below(size), y0 = rng.below(size);
    const double alpha = rng.uniform(0.5, 1.0);
    double col[3];
    for (auto& v : col) v = rng.uniform(0.05, 0.95);
    for (Index y = y0; y < std::min(size, y0 + h); ++y)
      for (Index x = x0; x < std::min(size, x0 + w); ++x)
        for (int c = 0; c < 3; ++c) {
          float& v = img[(c * size + y) * size + x];
          v = static_cast<float>((1.0 - alpha) * v + alpha * col[c]);
        }
  }
  // Low-amplitude sinusoidal texture plus fine noise.
  const double fx = rng.uniform(0.2, 0.8), fy = rng.uniform(0.2, 0.8);
  const double amp = rng.uniform(0.02, 0.06);
  for (Index y = 0; y < size; ++y)
    for (Index x = 0; x < size; ++x) {
      const double tex = amp * std::sin(fx * x) * std::cos(fy * y);
      for (int c = 0; c < 3; ++c) {
        float& v = img[(c * size + y) * size + x];
        v = static_cast<float>(std::clamp(v + tex + rng.normal(0.0, 0.01), 0.0, 1.0));
      }
    }
  return img;
}

// ---------------------------------------------------------------------------
// Manifests

PairManifest PairManifest::parse(const std::string& text, const std::string& base_dir,
                                 const std::string& source) {
  PairManifest m;
  m.base_dir = base_dir;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected 2 tab-separated fields, got " +
                        std::to_string(fields.size()));
    m.pairs.push_back({fields[0], fields[1]});
  }
  return m;
}

PairManifest PairManifest::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open manifest " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), fs::path(path).parent_path().string(), path);
}

void PairManifest::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& p : pairs) os << p.low << '\t' << p.ref << '\n';
  if (!os) throw IoError("failed writing " + path);
}

std::string PairManifest::resolve(const std::string& rel) const {
  const fs::path p(rel);
  if (p.is_absolute() || base_dir.empty()) return p.string();
  return (fs::path(base_dir) / p).string();
}

std::vector<ImagePair> load_pairs(const PairManifest& manifest) {
  std::vector<ImagePair> out;
  out.reserve(manifest.pairs.size());
  for (const auto& p : manifest.pairs) {
    ImagePair pair{load_image(manifest.resolve(p.low)), load_image(manifest.resolve(p.ref))};
    if (pair.low.shape() != pair.ref.shape())
      throw DimensionError("load_pairs", p.low + " is " + to_string(pair.low.shape()) + " but " +
                                             p.ref + " is " + to_string(pair.ref.shape()));
    out.push_back(std::move(pair));
  }
  return out;
}

PairManifest build_synth_dataset(const SynthOptions& opt, const std::string& out_dir) {
  if (opt.pairs < 0) throw ConfigError("pairs must be >= 0");
  if (opt.size < 1) throw ConfigError("size must be >= 1");
  opt.degrade.validate();
  std::error_code ec;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !opt.force)
    throw IoError(out_dir + " is not empty; pass --force to overwrite");
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  PairManifest m;
  m.base_dir = out_dir;
  const Rng root(opt.seed);
  for (Index i = 0; i < opt.pairs; ++i) {
    Rng pair_rng = root.split(static_cast<std::uint64_t>(i));
    Rng raster_rng = pair_rng.split("raster");
    const Tensor<float> ref = synth_reference(opt.size, raster_rng);
    DegradeParams d = opt.degrade;
    d.seed = pair_rng.split("degrade").engine()();
    const Tensor<float> low = synth_degrade(ref, d);
    char stem[32];
    std::snprintf(stem, sizeof stem, "pair_%04lld", static_cast<long long>(i));
    const PairPaths paths{std::string(stem) + "_low.ppm", std::string(stem) + "_ref.ppm"};
    save_image(low, m.resolve(paths.low));
    save_image(ref, m.resolve(paths.ref));
    m.pairs.push_back(paths);
  }
  m.save((fs::path(out_dir) / kManifestName).string());
  return m;
}

}  // namespace ecaf
