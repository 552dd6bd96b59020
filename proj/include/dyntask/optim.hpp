#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dyntask/tensor.hpp"

namespace dyntask {

struct OptimConfig {
  double lr = 0.1;
  // Published schedule: 60K and 80K iterations. Desk runs scale these down.
  std::vector<std::size_t> decay_points{60000, 80000};
  double decay_factor = 10.0;
  double rho = 0.99;  // moving-average decay of the squared gradient
  double epsilon = 1e-8;
  double weight_decay = 5e-5;

  void validate() const;
};

// lr / decay_factor^(number of decay points <= step)
double lr_schedule(const OptimConfig& cfg, std::size_t step);

// One parameter tensor offered to the optimizer for a step.
struct ParamGrad {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
  bool decay = false;  // weight decay applies (weights and filters only)
};

/// RMSprop with one zero-initialised accumulator per named parameter:
///   acc = rho * acc + (1 - rho) * g^2
///   p  -= lr(step) * g / (sqrt(acc) + epsilon)
/// where g includes weight_decay * p for decayed parameters.
class RmsProp {
 public:
  explicit RmsProp(OptimConfig cfg);

  const OptimConfig& config() const { return cfg_; }

  // Throws NumericalError naming the parameter if a gradient is non-finite;
  // no parameter is modified in that case.
  void step(std::span<const ParamGrad> params, std::size_t step_index);

  // nullptr until the parameter has been stepped once.
  const Tensor* accumulator(const std::string& name) const;

 private:
  OptimConfig cfg_;
  std::map<std::string, Tensor> acc_;
};

}  // namespace dyntask
