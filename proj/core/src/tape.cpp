#include "cactus/tape.hpp"

#include "cactus/error.hpp"

namespace cactus {

const Tensor& Var::value() const {
  if (!tape_) throw Error("Var::value on an unbound handle");
  return tape_->value(*this);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(*this); }

const Tensor& Gradients::operator[](Var leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) {
    throw Error("Gradients: handle " + std::to_string(leaf.id()) +
                " is not a differentiable leaf of this tape");
  }
  return it->second;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.is_leaf = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  bool tracked = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw Error("Tape::record: input belongs to another tape");
    tracked = tracked || nodes_[in.id_].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = tracked;
  if (tracked) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(Var v) {
  Node& node = nodes_[v.id_];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

Gradients Tape::backward(Var output) {
  if (output.tape_ != this) throw Error("backward: output is not on this tape");
  const Node& out = nodes_[output.id_];
  if (out.value.numel() != 1) {
    throw ShapeError("backward: output must be a scalar, got shape " +
                     shape_str(out.value.shape()));
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  grad_buffer(output)[0] = 1.0;

  for (std::size_t id = output.id_ + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || node.is_leaf || !node.backward) continue;
    node.backward(*this, node.grad);
  }

  Gradients result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    Node& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad) continue;
    result.grads_.emplace(id, node.has_grad ? node.grad : Tensor(node.value.shape(), 0.0));
  }
  return result;
}

}  // namespace cactus
