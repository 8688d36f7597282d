// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <map>
#include <string>

#include "ecaf/tensor.hpp"

namespace ecaf {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  /// Set by a backward sweep that saw this parameter; cleared by zero_grad.
  bool has_grad = false;
};

/// Named, insertion-ordered learnable tensors. References returned by add()
/// and get() stay valid for the store's lifetime.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    auto& p = params_.emplace_back();
    p.name = name;
    p.grad = Tensor<T>(value.shape());
    p.value = std::move(value);
    return p;
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  Parameter<T>& get(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter '" + name + "'");
  }
  const Parameter<T>& get(const std::string& name) const {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter '" + name + "'");
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.grad.fill(T(0));
      p.has_grad = false;
    }
  }

  /// Total number of learnable scalars.
  Index count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ecaf
