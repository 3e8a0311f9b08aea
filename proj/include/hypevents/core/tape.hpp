#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "hypevents/core/tensor.hpp"

namespace hypevents {

/// A trainable tensor owned by a model. Gradients from every tape the
/// parameter is bound to accumulate into `grad`.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name(std::move(name)), value(std::move(value)), grad(this->value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }

  std::string name;
  Tensor value;
  Tensor grad;
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;

  /// Reference into the tape; invalidated when the tape records more nodes.
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() pass; zeros when the node was unreachable.
  Tensor grad() const;
  bool requires_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records operations in execution order and replays their backward rules in
/// reverse. Not thread-safe; one tape per forward/backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  /// Binds a model parameter; backward() adds this node's gradient into p.grad.
  Var param(Parameter& p);

  /// Appends an op node. The backward rule is kept only when some input
  /// requires grad.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor& grad(std::size_t id);
  Tensor grad_or_zero(std::size_t id) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

}  // namespace hypevents
