// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecaf {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when operand extents disagree. `axis()` names the offending axis.
class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& op, const std::string& axis, Index expected, Index actual);
  DimensionError(const std::string& op, const std::string& message);

  const std::string& axis() const noexcept { return axis_; }

 private:
  std::string axis_;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A NaN or Inf escaped an op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array. Activations are laid out B x C x H x W.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  /// Extent of `axis`; negative values count from the back.
  Index dim(Index axis) const;
  Index size() const noexcept { return static_cast<Index>(values_.size()); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }

  T& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }

  /// Value of a single-element tensor.
  T item() const;

  Tensor reshaped(Shape shape) const;
  void fill(T v);
  bool all_finite() const noexcept;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(values_.begin(), values_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  Shape shape_;
  std::vector<T> values_;
};

/// Bitwise comparison, unlike operator== which treats -0 == +0.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

// ECAT stream format: "ECAT", u32 version, u32 rank, u32 extents[rank],
// then float32 payload. All little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor(std::istream& is);

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t);
template <typename T>
Tensor<T> load_tensor(const std::string& path);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ecaf
