#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "iclmol/num/tape.hpp"

namespace iclmol::num {

/// Ordered, named set of trainable tensors. Order is insertion order and is
/// the order used for checkpoints, optimizers and gradient reduction.
template <std::floating_point T>
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor<T> value) {
    if (find(name) != npos) throw DataError("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return npos;
  }

  std::size_t index(std::string_view name) const {
    const auto i = find(name);
    if (i == npos) throw DataError("unknown parameter '" + std::string(name) + "'");
    return i;
  }

  Tensor<T>& at(std::string_view name) { return values_[index(name)]; }
  const Tensor<T>& at(std::string_view name) const { return values_[index(name)]; }

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& value(std::size_t i) { return values_[i]; }
  const Tensor<T>& value(std::size_t i) const { return values_[i]; }
  std::vector<Tensor<T>>& values() noexcept { return values_; }
  const std::vector<Tensor<T>>& values() const noexcept { return values_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  /// Registers every parameter on the tape without copying.
  std::vector<Var<T>> bind(Tape<T>& tape) const {
    std::vector<Var<T>> vars;
    vars.reserve(values_.size());
    for (const auto& v : values_) vars.push_back(tape.watch(v, v.requires_grad()));
    return vars;
  }

  /// Gradients of bound parameters, in store order.
  std::vector<Tensor<T>> grads(const Tape<T>& tape, const std::vector<Var<T>>& vars) const {
    std::vector<Tensor<T>> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back(tape.grad(v));
    return out;
  }

  /// Same names and shapes.
  bool same_layout(const ParamStore& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (names_[i] != other.names_[i] || values_[i].shape() != other.values_[i].shape()) return false;
    return true;
  }

  template <std::floating_point U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
};

template <std::floating_point T>
Tensor<T> random_normal(Shape shape, T stddev, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& x : t.data()) x = static_cast<T>(dist(rng));
  return t;
}

}  // namespace iclmol::num
