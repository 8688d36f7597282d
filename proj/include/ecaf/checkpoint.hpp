// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ecaf/tensor.hpp"

namespace ecaf {

/// On-disk layout (little-endian):
///   "ECAK", u32 version
///   u32 text length, text: "[config]\n" key=value lines, "[state]\n" key=value lines
///   u32 record count, per record: u32 name length, name, u32 rank, u32 extents[rank],
///   u64 offset into the data section
///   data section: each tensor in the ECAT stream format, in record order
struct Checkpoint {
  using KeyValues = std::vector<std::pair<std::string, std::string>>;

  KeyValues config;
  KeyValues state;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  const std::string* state_value(const std::string& key) const;

  /// Writes to `path` via a temporary file; throws IoError on any write failure.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace ecaf
