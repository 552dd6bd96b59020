#include "dyntask/tape.hpp"

#include "dyntask/errors.hpp"

namespace dyntask {

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::leaf(Tensor value, std::string name) {
  if (!value.all_finite()) throw NumericalError("non-finite value in leaf '" + name + "'");
  nodes_.push_back(Node{std::move(name), std::move(value), {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value, std::string name) {
  if (!value.all_finite()) throw NumericalError("non-finite value in constant '" + name + "'");
  nodes_.push_back(Node{std::move(name), std::move(value), {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  if (!value.all_finite()) {
    throw NumericalError("op '" + op + "' produced a non-finite value (shape " +
                         shape_str(value.shape()) + ")");
  }
  bool needs = false;
  for (auto in : inputs) {
    if (in >= nodes_.size()) throw ContractError("op '" + op + "' references a future node");
    needs = needs || nodes_[in].needs_grad;
  }
  nodes_.push_back(Node{std::move(op), std::move(value), std::move(inputs), std::move(backward), needs});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  if (!has_grad_[id]) {
    grads_[id] = Tensor::zeros(nodes_[id].value.shape());
    has_grad_[id] = true;
  }
  return grads_[id];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
  if (value(loss.id).numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(value(loss.id).shape()));
  }
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), false);
  grad_slot(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (!has_grad_[i] || !nodes_[i].needs_grad || !nodes_[i].backward) continue;
    nodes_[i].backward(*this, i);
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    grad_slot(i);
    if (!grads_[i].all_finite()) {
      throw NumericalError("non-finite gradient at node " + std::to_string(i) + " ('" +
                           nodes_[i].op + "')");
    }
  }
  backward_done_ = true;
}

const Tensor& Tape::grad(std::size_t id) const {
  if (!backward_done_) throw ContractError("grad() requested before backward()");
  return grads_.at(id);
}

}  // namespace dyntask
