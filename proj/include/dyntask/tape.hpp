#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dyntask/tensor.hpp"

namespace dyntask {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Define-by-run recording of a computation. Nodes are appended in evaluation
/// order, so every input id is smaller than the node that consumes it and a
/// reverse sweep is a valid topological order.
class Tape {
 public:
  // Accumulates the node's gradient into its inputs' gradient slots.
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A differentiable leaf (parameter or input under test).
  Var leaf(Tensor value, std::string name = "leaf");
  // A leaf that never receives a gradient.
  Var constant(Tensor value, std::string name = "const");

  // Records an op result. Throws NumericalError when `value` holds NaN/Inf.
  Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps backwards. Afterwards every node has
  // a gradient slot of its value's shape; unreachable nodes hold zeros.
  // Throws ContractError for a non-scalar loss.
  void backward(Var loss);

  const Tensor& grad(std::size_t id) const;
  const Tensor& grad(Var v) const { return grad(v.id); }

  // Zero-initialised on first use. Used by Backward implementations.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;  // stable addresses: value() references survive later pushes
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  bool backward_done_ = false;
};

}  // namespace dyntask
