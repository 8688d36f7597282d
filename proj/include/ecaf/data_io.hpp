// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecaf/rng.hpp"
#include "ecaf/tensor.hpp"

namespace ecaf {

/// Reads an 8-bit RGB image (PPM P6 or PNG, chosen by extension) as a
/// [3,H,W] tensor with values v/255.
Tensor<float> load_image(const std::string& path);

/// Writes a [3,H,W] tensor as 8-bit RGB using round(v*255) with halves rounded
/// up. Out-of-range values are clamped with one warning per image.
void save_image(const Tensor<float>& image, const std::string& path);

/// Byte quantization used by save_image.
std::uint8_t quantize_unit(float v);

struct DegradeParams {
  double gamma = 2.2;
  double gain = 0.3;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

/// clamp(gain * ref^gamma + N(0, sigma^2), 0, 1), noise drawn from `seed`.
Tensor<float> synth_degrade(const Tensor<float>& ref, const DegradeParams& p);

/// Seeded [3,size,size] reference raster: a smooth color gradient, a few
/// rectangles, and a low-amplitude texture.
Tensor<float> synth_reference(Index size, Rng& rng);

struct PairPaths {
  std::string low;
  std::string ref;
};

/// One "low<TAB>ref" pair per line; relative paths resolve against the
/// manifest's directory.
struct PairManifest {
  std::vector<PairPaths> pairs;
  std::string base_dir;

  /// `source` names the input in error messages.
  static PairManifest parse(const std::string& text, const std::string& base_dir,
                            const std::string& source = "manifest");
  static PairManifest load(const std::string& path);
  void save(const std::string& path) const;
  std::string resolve(const std::string& rel) const;
};

struct ImagePair {
  Tensor<float> low;
  Tensor<float> ref;
};

/// Loads every pair, checking that the two images of a pair share dimensions.
std::vector<ImagePair> load_pairs(const PairManifest& manifest);

struct SynthOptions {
  Index pairs = 8;
  Index size = 64;
  std::uint64_t seed = 0;
  DegradeParams degrade;
  bool force = false;
};

/// Writes pair_XXXX_{low,ref}.ppm and manifest.tsv into `out_dir`. A non-empty
/// directory is refused unless `force`. Returns the manifest (paths relative).
PairManifest build_synth_dataset(const SynthOptions& opt, const std::string& out_dir);

inline constexpr const char* kManifestName = "manifest.tsv";

}  // namespace ecaf
