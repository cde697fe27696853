#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string_view>
#include <vector>

#include "iclmol/num/tensor.hpp"

namespace iclmol::num {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape.
template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return tape->value(*this).shape(); }
};

/// Records a computation in topological order and runs reverse-mode
/// differentiation over it. Values are appended once and never mutated, so a
/// record's inputs always have smaller ids than the record itself.
template <std::floating_point T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  struct Record {
    std::string_view op;
    std::vector<std::uint32_t> inputs;
    std::uint32_t output = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that owns its value.
  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = requires_grad;
    return push("leaf", std::move(n), {});
  }

  /// Leaf that refers to caller-owned storage; the tensor must outlive the tape.
  Var<T> watch(const Tensor<T>& external, bool requires_grad) {
    Node n;
    n.external = &external;
    n.needs_grad = requires_grad;
    return push("param", std::move(n), {});
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. The backward function reads grad(self) and
  /// accumulates into the inputs that need gradients.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(std::string_view op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    std::vector<std::uint32_t> ids;
    ids.reserve(inputs.size());
    for (const auto& v : inputs) {
      ids.push_back(v.id);
      n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
    }
    if (n.needs_grad) n.backward = std::move(fn);
    return push(op, std::move(n), std::move(ids));
  }

  const Tensor<T>& value(Var<T> v) const { return value(v.id); }
  const Tensor<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  bool needs_grad(Var<T> v) const { return nodes_[v.id].needs_grad; }
  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  /// Gradient accumulator for a node, allocated as zeros on first use.
  Tensor<T>& grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>(value(id).shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Gradient after backward(); zeros if nothing flowed into the node.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    return n.has_grad ? n.grad : Tensor<T>(value(v.id).shape());
  }

  bool has_grad(std::uint32_t id) const { return nodes_[id].has_grad; }

  void backward(Var<T> loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward: loss " + shape_str(value(loss).shape()) + " is not scalar");
    }
    grad_buffer(loss.id)[0] += T(1);
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.needs_grad && n.has_grad && n.backward) n.backward(*this, id);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Record>& records() const noexcept { return records_; }

  std::string describe(std::uint32_t id) const {
    return std::string(records_[id].op) + " (record #" + std::to_string(id) + ")";
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    BackwardFn backward;
  };

  Var<T> push(std::string_view op, Node n, std::vector<std::uint32_t> inputs) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back(std::move(n));
    records_.push_back(Record{op, std::move(inputs), id});
    return Var<T>{this, id};
  }

  std::vector<Node> nodes_;
  std::vector<Record> records_;
};

}  // namespace iclmol::num
