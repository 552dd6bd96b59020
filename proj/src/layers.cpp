#include "dyntask/layers.hpp"

#include <cmath>
#include <string>

#include "dyntask/errors.hpp"

namespace dyntask {

Tensor xavier_init(const Shape& shape, Rng& rng) {
  if (shape.empty()) throw DimensionError("xavier_init: empty shape");
  double fan_in = 0, fan_out = 0;
  if (shape.size() == 1) {
    fan_in = fan_out = static_cast<double>(shape[0]);
  } else if (shape.size() == 2) {
    fan_in = static_cast<double>(shape[0]);
    fan_out = static_cast<double>(shape[1]);
  } else {
    double receptive = 1;
    for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<double>(shape[i]);
    fan_in = static_cast<double>(shape[1]) * receptive;
    fan_out = static_cast<double>(shape[0]) * receptive;
  }
  // Var(U(-a, a)) = a^2 / 3
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor out(shape);
  for (auto& v : out.raw()) v = dist(rng);
  return out;
}

DenseLayer DenseLayer::xavier(std::size_t d_in, std::size_t d_out, Rng& rng) {
  return DenseLayer{xavier_init({d_in, d_out}, rng), Tensor::zeros({d_out})};
}

BatchNormLayer BatchNormLayer::fresh(std::size_t channels) {
  return BatchNormLayer{Tensor::full({channels}, 1.0), Tensor::zeros({channels}),
                        Tensor::zeros({channels}), Tensor::full({channels}, 1.0)};
}

ConvBlockLayer ConvBlockLayer::xavier(std::size_t in_channels, std::size_t filters,
                                      std::size_t kernel, Rng& rng) {
  return ConvBlockLayer{xavier_init({filters, in_channels, kernel, kernel}, rng),
                        Tensor::zeros({filters}), BatchNormLayer::fresh(filters)};
}

namespace nn {

Var dense(Var input, Var weight, Var bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw DimensionError("dense: input " + shape_str(x.shape()) + " does not fit weight " +
                         shape_str(w.shape()));
  }
  return ag::add_rowvec(ag::matmul(input, weight), bias);
}

Var batchnorm(Var input, Var gamma, Var beta, BatchNormLayer& layer, Mode mode) {
  if (mode == Mode::Eval) {
    return ag::batchnorm_eval(input, gamma, beta, layer.running_mean.data(),
                              layer.running_var.data(), kBatchNormEps);
  }
  ag::BatchStats stats;
  Var out = ag::batchnorm_train(input, gamma, beta, kBatchNormEps, &stats);
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    layer.running_mean[c] =
        (1.0 - kBatchNormMomentum) * layer.running_mean[c] + kBatchNormMomentum * stats.mean[c];
    layer.running_var[c] =
        (1.0 - kBatchNormMomentum) * layer.running_var[c] + kBatchNormMomentum * stats.var[c];
  }
  return out;
}

Var dropout(Var input, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::Eval || p == 0.0) return input;
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Tensor mask(input.shape());
  for (auto& v : mask.raw()) v = keep(rng) ? scale : 0.0;
  return ag::mul(input, input.tape->constant(std::move(mask), "dropout_mask"));
}

}  // namespace nn

}  // namespace dyntask
