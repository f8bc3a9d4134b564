#include "deconf/autodiff.hpp"

namespace deconf {

const Tensor& Var::value() const { return tape_->value(id_); }

Tensor Var::grad() const {
  if (tape_->has_grad(id_)) return tape_->grad(id_);
  return Tensor::Zero(rows(), cols());
}

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  check_finite(value, "constant");
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor value) {
  check_finite(value, "parameter");
  nodes_.push_back(Node{std::move(value), Tensor(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  check_finite(value, "tape op");
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ValidationError("tape op: input from a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Tensor(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ValidationError("backward: loss from a different tape");
  if (loss.value().size() != 1) throw DimensionError("backward: loss must be a scalar");
  visits_ = 0;
  if (!nodes_[loss.id()].requires_grad) return;
  grad(loss.id()).setOnes();
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    ++visits_;
    n.backward(*this, i);
  }
}

}  // namespace deconf
