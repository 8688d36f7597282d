// SPDX-License-Identifier: Apache-2.0
#include "ecaf/autodiff.hpp"

#include <atomic>
#include <string>

namespace ecaf {

namespace fault {
namespace {
std::atomic<bool> g_grad_bug{false};
}
void plant_grad_bug(bool enabled) { g_grad_bug.store(enabled); }
bool grad_bug_planted() { return g_grad_bug.load(); }
}  // namespace fault

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  auto& n = nodes_.emplace_back();
  n.value = p.value;
  n.requires_grad = true;
  n.param = &p;
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  if (!value.all_finite())
    throw NumericError(std::string(op) + ": produced a non-finite value");
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.valid() && &in.tape() != this)
      throw DimensionError(std::string(op), "input recorded on a different tape");
    if (in.valid() && nodes_[in.id()].requires_grad) needs = true;
  }
  auto& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = needs;
  n.is_leaf = false;
  if (needs) n.backward = std::move(backward);
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>* Tape<T>::grad_sink(const Var<T>& v) {
  if (!v.valid()) return nullptr;
  auto& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty() && n.value.size() > 0) n.grad = Tensor<T>(n.value.shape());
  if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return &n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  if (&loss.tape() != this) throw DimensionError("backward", "loss recorded on a different tape");
  if (loss.value().size() != 1)
    throw DimensionError("backward", "loss must be a scalar, got shape " +
                                         to_string(loss.value().shape()));
  for (auto& n : nodes_)
    if (!n.is_leaf || n.param) n.grad = Tensor<T>();
  if (!nodes_[loss.id()].requires_grad) {
    for (auto& n : nodes_)
      if (n.param) n.param->has_grad = true;
    return;
  }
  auto* seed = grad_sink(loss);
  (*seed)[0] += T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (!n.param) continue;
    Parameter<T>& p = *n.param;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
    if (!n.grad.empty())
      for (Index k = 0; k < p.grad.size(); ++k) p.grad[k] += n.grad[k];
    p.has_grad = true;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace ecaf
