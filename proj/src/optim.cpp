#include "dyntask/optim.hpp"

#include <cmath>

#include "dyntask/errors.hpp"

namespace dyntask {

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be > 0");
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("optim.rho must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("optim.epsilon must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
  if (!(decay_factor > 0.0)) throw ConfigError("optim.decay_factor must be > 0");
  for (std::size_t i = 1; i < decay_points.size(); ++i) {
    if (decay_points[i] <= decay_points[i - 1]) {
      throw ConfigError("optim.decay_points must be strictly increasing");
    }
  }
}

double lr_schedule(const OptimConfig& cfg, std::size_t step) {
  double lr = cfg.lr;
  for (auto point : cfg.decay_points) {
    if (point <= step) lr /= cfg.decay_factor;
  }
  return lr;
}

RmsProp::RmsProp(OptimConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void RmsProp::step(std::span<const ParamGrad> params, std::size_t step_index) {
  for (const auto& p : params) {
    require_same_shape(*p.value, *p.grad, p.name.c_str());
    if (!p.grad->all_finite()) {
      throw NumericalError("non-finite gradient for parameter '" + p.name + "' at step " +
                           std::to_string(step_index));
    }
  }
  const double lr = lr_schedule(cfg_, step_index);
  for (const auto& p : params) {
    auto [it, fresh] = acc_.try_emplace(p.name, Tensor::zeros(p.value->shape()));
    Tensor& acc = it->second;
    Tensor& value = *p.value;
    const Tensor& grad = *p.grad;
    const double wd = p.decay ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const double g = grad[i] + wd * value[i];
      acc[i] = cfg_.rho * acc[i] + (1.0 - cfg_.rho) * g * g;
      value[i] -= lr * g / (std::sqrt(acc[i]) + cfg_.epsilon);
    }
  }
}

const Tensor* RmsProp::accumulator(const std::string& name) const {
  auto it = acc_.find(name);
  return it == acc_.end() ? nullptr : &it->second;
}

}  // namespace dyntask
