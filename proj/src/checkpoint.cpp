// SPDX-License-Identifier: Apache-2.0
#include "ecaf/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "byte_io.hpp"

namespace ecaf {

namespace {

std::string render_text(const Checkpoint& ck) {
  std::string text = "[config]\n";
  for (const auto& [k, v] : ck.config) text += k + "=" + v + "\n";
  text += "[state]\n";
  for (const auto& [k, v] : ck.state) text += k + "=" + v + "\n";
  return text;
}

void parse_text(const std::string& text, Checkpoint& ck) {
  std::istringstream is(text);
  std::string line;
  Checkpoint::KeyValues* section = nullptr;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line == "[config]") {
      section = &ck.config;
      continue;
    }
    if (line == "[state]") {
      section = &ck.state;
      continue;
    }
    const auto eq = line.find('=');
    if (!section || eq == std::string::npos)
      throw FormatError("checkpoint text block line " + std::to_string(lineno) +
                        ": expected key=value");
    section->emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
}

std::uint64_t serialized_size(const Tensor<float>& t) {
  return 4 + 4 + 4 + 4 * static_cast<std::uint64_t>(t.rank()) +
         4 * static_cast<std::uint64_t>(t.size());
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

const std::string* Checkpoint::state_value(const std::string& key) const {
  for (const auto& [k, v] : state)
    if (k == key) return &v;
  return nullptr;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp + " for writing");
    os.write("ECAK", 4);
    detail::put_u32(os, kCheckpointVersion);
    const std::string text = render_text(*this);
    detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors) {
      detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (Index e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
      detail::put_u64(os, offset);
      offset += serialized_size(t);
    }
    for (const auto& [name, t] : tensors) write_tensor(os, t);
    os.flush();
    if (!os) throw IoError("failed writing checkpoint " + tmp + " (disk full?)");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  Checkpoint ck;
  try {
    if (detail::get_bytes(is, 4) != "ECAK")
      throw FormatError(path + ": not a checkpoint (bad magic)");
    const std::uint32_t version = detail::get_u32(is);
    if (version != kCheckpointVersion)
      throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    parse_text(detail::get_bytes(is, detail::get_u32(is)), ck);
    const std::uint32_t count = detail::get_u32(is);
    struct Record {
      std::string name;
      Shape shape;
      std::uint64_t offset;
    };
    std::vector<Record> records(count);
    for (auto& r : records) {
      r.name = detail::get_bytes(is, detail::get_u32(is));
      r.shape.resize(detail::get_u32(is));
      for (auto& e : r.shape) e = detail::get_u32(is);
      r.offset = detail::get_u64(is);
    }
    const std::streamoff data_start = is.tellg();
    for (const auto& r : records) {
      is.seekg(data_start + static_cast<std::streamoff>(r.offset));
      Tensor<float> t = read_tensor<float>(is);
      if (t.shape() != r.shape)
        throw FormatError(path + ": record '" + r.name + "' shape " + to_string(r.shape) +
                          " disagrees with payload " + to_string(t.shape()));
      ck.tensors.emplace_back(r.name, std::move(t));
    }
  } catch (const IoError&) {
    throw IoError(path + ": truncated checkpoint");
  }
  return ck;
}

}  // namespace ecaf
