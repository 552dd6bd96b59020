#pragma once

#include <cstddef>
#include <random>

#include "dyntask/ops.hpp"
#include "dyntask/tensor.hpp"

namespace dyntask {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Zero-mean uniform draw with variance 2 / (fan_in + fan_out).
/// Matrices are (fan_in x fan_out); kernels OCKhKw use fan_in = C*Kh*Kw and
/// fan_out = O*Kh*Kw; vectors use their length for both.
Tensor xavier_init(const Shape& shape, Rng& rng);

struct DenseLayer {
  Tensor weight;  // d_in x d_out
  Tensor bias;    // d_out

  static DenseLayer xavier(std::size_t d_in, std::size_t d_out, Rng& rng);
  std::size_t parameter_count() const { return weight.numel() + bias.numel(); }
};

struct BatchNormLayer {
  Tensor gamma;  // ones
  Tensor beta;   // zeros
  Tensor running_mean;
  Tensor running_var;

  static BatchNormLayer fresh(std::size_t channels);
};

struct ConvBlockLayer {
  Tensor kernel;  // O x C x K x K
  Tensor bias;    // O
  BatchNormLayer norm;

  static ConvBlockLayer xavier(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                               Rng& rng);
};

namespace nn {

// input . W + b
Var dense(Var input, Var weight, Var bias);

// Train mode standardises with batch statistics and moves the running
// statistics of `layer` towards them at kBatchNormMomentum. Eval mode reads
// the running statistics only.
Var batchnorm(Var input, Var gamma, Var beta, BatchNormLayer& layer, Mode mode);

// Inverted dropout: survivors are scaled by 1 / (1 - p) so eval is the identity.
// p must lie in [0, 1).
Var dropout(Var input, double p, Mode mode, Rng& rng);

inline Var softmax_rows(Var logits) { return ag::softmax_rows(logits); }

}  // namespace nn

}  // namespace dyntask
