// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string_view>

#include "ecaf/param_store.hpp"
#include "ecaf/tensor.hpp"

namespace ecaf {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(Index axis) const { return value().dim(axis); }
  /// Accumulated gradient; empty when none reached this value.
  const Tensor<T>& grad() const;
  bool requires_grad() const;

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Single-writer record of ops for reverse-mode differentiation. Each record
/// owns its output value and a backward rule; intermediates a rule needs are
/// captured by value when the op runs.
template <typename T>
class Tape {
 public:
  /// Called with the gradient of the record's output; pushes into inputs via grad_sink.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  /// Leaf whose gradient is added into `p.grad` on every backward sweep.
  Var<T> param(Parameter<T>& p);

  /// Appends an op output. Non-finite values are rejected with NumericError.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward);

  /// Gradient accumulator for `v`, zero-filled on first use; nullptr when v needs no gradient.
  Tensor<T>* grad_sink(const Var<T>& v);

  /// Seeds d(loss)/d(loss) = 1 and sweeps records in reverse. Leaf gradients
  /// accumulate across calls; intermediate gradients are recomputed.
  void backward(const Var<T>& loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool is_leaf = true;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}
template <typename T>
const Tensor<T>& Var<T>::grad() const {
  return tape_->grad(id_);
}
template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

namespace fault {
/// Test hook: when set, conv2d's weight gradient is doubled.
void plant_grad_bug(bool enabled);
bool grad_bug_planted();
}  // namespace fault

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ecaf
