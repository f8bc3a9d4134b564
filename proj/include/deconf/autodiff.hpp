#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "deconf/tensor.hpp"

namespace deconf {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the
/// tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  /// Accumulated gradient; a zero tensor when nothing flowed into this node.
  Tensor grad() const;
  bool requires_grad() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of a computation for reverse-mode differentiation.
/// Node ids are assigned in creation order, so reverse id order is a valid
/// topological order for the backward sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var parameter(Tensor value);

  /// Records an op output. `backward` is kept only if some input requires a
  /// gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient buffer of node `id`, allocated as zeros on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return nodes_[id].grad.size() > 0; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adds `contribution` to the gradient of `id` if that node requires one.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& contribution) {
    if (!nodes_[id].requires_grad) return;
    grad(id) += contribution;
  }

  std::size_t size() const { return nodes_.size(); }
  /// Number of backward closures executed by the last backward() call.
  std::size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace deconf
