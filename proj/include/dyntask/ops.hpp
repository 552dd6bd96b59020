#pragma once

// Differentiable operations recorded on a Tape. Each returns a new Var on the
// tape of its first argument.
//
// Broadcasting is limited to identical shapes or scalar (numel 1) against a
// tensor. Row/channel broadcasts for biases have their own ops.

#include <cstddef>
#include <span>
#include <vector>

#include "dyntask/tape.hpp"

namespace dyntask::ag {

Var matmul(Var a, Var b);
// Cross-correlation of NCHW input with OCKhKw kernel (no bias).
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var relu(Var x);  // relu'(0) = 0
Var exp(Var x);
Var log(Var x);   // DomainError unless every element > 0
Var sqrt(Var x);  // DomainError unless every element > 0
Var square(Var x);
Var max_const(Var x, double c);  // elementwise max(x, c); gradient 0 where x <= c
Var scale(Var x, double c);
Var add_scalar(Var x, double c);

Var reduce_sum(Var x);   // -> shape {1}
Var reduce_mean(Var x);  // -> shape {1}
Var row_sum(Var x);      // m x k -> m x 1
Var mean_rows(Var x);    // m x k -> 1 x k (mean over the batch axis)
Var sub_rowmax(Var x);   // each row minus its maximum

Var add_rowvec(Var x, Var bias);   // m x n + n, bias broadcast over rows
Var add_channel(Var x, Var bias);  // NCHW + C, bias broadcast over N, H, W
Var broadcast_cols(Var column, std::size_t k);  // m x 1 -> m x k
Var gather_cols(Var x, std::span<const std::size_t> labels);  // m x k -> m x 1, x[i, labels[i]]
Var pick(Var x, std::size_t flat_index);  // -> shape {1}

Var reshape(Var x, Shape shape);
Var maxpool2x2(Var x);  // NCHW, stride 2, floor on odd extents; ties go to the first element

Var softmax_rows(Var logits);
// Euclidean distances between rows: out[i, l] = ||x_i - c_l||. The gradient
// at a zero distance is taken as zero.
Var pairwise_distance(Var x, Var centers);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

// Per-feature (rank 2) or per-channel (rank 4) standardisation with batch
// statistics, then gamma * xhat + beta. Requires at least 2 samples.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr);
// Same affine map using fixed running statistics.
Var batchnorm_eval(Var x, Var gamma, Var beta, std::span<const double> running_mean,
                   std::span<const double> running_var, double eps);

}  // namespace dyntask::ag
