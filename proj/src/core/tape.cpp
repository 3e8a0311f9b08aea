#include "hypevents/core/tape.hpp"

#include "hypevents/core/error.hpp"

namespace hypevents {

const Tensor& Var::value() const {
  if (!tape_) throw Error(ErrorCode::contract, "use of an unbound Var");
  return tape_->value(id_);
}

Tensor Var::grad() const {
  if (!tape_) throw Error(ErrorCode::contract, "use of an unbound Var");
  return tape_->grad_or_zero(id_);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  Node node;
  node.value = p.value;
  node.requires_grad = true;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owned(Var v) const {
  if (v.tape() != this) throw Error(ErrorCode::contract, "Var belongs to a different tape");
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& in : inputs) {
    check_owned(in);
    needs = needs || nodes_[in.id()].requires_grad;
  }
  Node node;
  node.value = std::move(value);
  node.requires_grad = needs;
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

Tensor Tape::grad_or_zero(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.has_grad) return node.grad;
  return Tensor(node.value.shape());
}

void Tape::backward(Var loss) {
  check_owned(loss);
  const Tensor& out = nodes_[loss.id()].value;
  if (out.numel() != 1) {
    throw Error(ErrorCode::contract,
                "backward() needs a scalar loss, got shape " + to_string(out.shape()));
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
  }
  grad(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param) {
      Tensor& acc = node.param->grad;
      if (acc.shape() != node.value.shape()) acc = Tensor(node.value.shape());
      auto src = nodes_[i].grad.data();
      auto dst = acc.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

}  // namespace hypevents
