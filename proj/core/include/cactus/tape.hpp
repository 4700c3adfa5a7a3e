#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <unordered_map>

#include "cactus/tensor.hpp"

namespace cactus {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the lifetime
// of its tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Leaf gradients produced by Tape::backward. Leaves that the output does not
/// depend on map to zeros of matching shape.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

// Single-threaded reverse-mode tape. Nodes are appended in evaluation order,
// so reverse id order is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends an op result. The node tracks gradients iff some input does; the
  /// closure is dropped otherwise.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  Gradients backward(Var output);

  /// Adjoint accumulator of `v`, zero-initialised on first access. Only valid
  /// inside a running backward pass.
  Tensor& grad_buffer(Var v);

  const Tensor& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

}  // namespace cactus
