// SPDX-License-Identifier: Apache-2.0
#include "ecaf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "byte_io.hpp"

namespace ecaf {

namespace {

std::string dimension_message(const std::string& op, const std::string& axis, Index expected,
                              Index actual) {
  std::ostringstream os;
  os << op << ": dimension mismatch on axis '" << axis << "' (expected " << expected << ", got "
     << actual << ")";
  return os.str();
}

}  // namespace

DimensionError::DimensionError(const std::string& op, const std::string& axis, Index expected,
                               Index actual)
    : std::invalid_argument(dimension_message(op, axis, expected, actual)), axis_(axis) {}

DimensionError::DimensionError(const std::string& op, const std::string& message)
    : std::invalid_argument(op + ": " + message) {}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (Index e : shape_)
    if (e < 0) throw DimensionError("Tensor", "negative extent in " + to_string(shape_));
  values_.assign(static_cast<std::size_t>(numel(shape_)), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (numel(shape_) != static_cast<Index>(values_.size()))
    throw DimensionError("Tensor", "size", numel(shape_), static_cast<Index>(values_.size()));
}

template <typename T>
Index Tensor<T>::dim(Index axis) const {
  const Index r = rank();
  const Index a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("Tensor::dim", "axis " + std::to_string(axis) + " out of range for rank " +
                                            std::to_string(r));
  return shape_[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (values_.size() != 1) throw DimensionError("Tensor::item", "size", 1, size());
  return values_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (numel(shape) != size()) throw DimensionError("reshape", "size", size(), numel(shape));
  return Tensor(std::move(shape), values_);
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(values_.begin(), values_.end(), v);
}

template <typename T>
bool Tensor<T>::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(T)) == 0;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("max_abs_diff", "shapes " + to_string(a.shape()) + " and " +
                                             to_string(b.shape()) + " differ");
  T m = 0;
  for (Index i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("ECAT", 4);
  detail::put_u32(os, kTensorFormatVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (Index e : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
  for (T v : t.values()) detail::put_f32(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  const std::string magic = detail::get_bytes(is, 4);
  if (magic != "ECAT") throw FormatError("tensor stream: bad magic (expected ECAT)");
  const std::uint32_t version = detail::get_u32(is);
  if (version != kTensorFormatVersion)
    throw FormatError("tensor stream: unsupported version " + std::to_string(version));
  const std::uint32_t rank = detail::get_u32(is);
  if (rank > 8) throw FormatError("tensor stream: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_u32(is);
  std::vector<T> values(static_cast<std::size_t>(numel(shape)));
  for (auto& v : values) v = static_cast<T>(detail::get_f32(is));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_tensor(os, t);
  os.flush();
  if (!os) throw IoError("failed writing " + path);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_tensor<T>(is);
}

template class Tensor<float>;
template class Tensor<double>;

#define ECAF_INSTANTIATE(T)                                                \
  template bool bitwise_equal(const Tensor<T>&, const Tensor<T>&);         \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);             \
  template void write_tensor(std::ostream&, const Tensor<T>&);             \
  template Tensor<T> read_tensor<T>(std::istream&);                        \
  template void save_tensor(const std::string&, const Tensor<T>&);         \
  template Tensor<T> load_tensor<T>(const std::string&);
ECAF_INSTANTIATE(float)
ECAF_INSTANTIATE(double)
#undef ECAF_INSTANTIATE

}  // namespace ecaf
