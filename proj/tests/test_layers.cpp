#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "dyntask/errors.hpp"
#include "dyntask/layers.hpp"
#include "helpers.hpp"

using namespace dyntask;

TEST(Xavier, VarianceAndMeanOf512Square) {
  Rng rng(42);
  Tensor w = xavier_init({512, 512}, rng);
  const double n = static_cast<double>(w.numel());
  const double mean = std::accumulate(w.raw().begin(), w.raw().end(), 0.0) / n;
  double var = 0;
  for (double v : w.raw()) var += (v - mean) * (v - mean);
  var /= n;
  const double expected = 2.0 / 1024.0;
  EXPECT_LT(std::abs(var - expected) / expected, 0.2);
  EXPECT_LT(std::abs(mean), 3.0 * std::sqrt(expected) / std::sqrt(n));
}

TEST(Xavier, SameSeedSameDraw) {
  Rng a(3), b(3);
  EXPECT_EQ(xavier_init({20, 30}, a), xavier_init({20, 30}, b));
}

TEST(Xavier, KernelFans) {
  Rng rng(5);
  Tensor k = xavier_init({64, 32, 3, 3}, rng);
  double var = 0;
  for (double v : k.raw()) var += v * v;
  var /= static_cast<double>(k.numel());
  const double expected = 2.0 / (32 * 9 + 64 * 9);
  EXPECT_LT(std::abs(var - expected) / expected, 0.2);
}

TEST(Xavier, FreshBiasesAreZero) {
  Rng rng(1);
  DenseLayer d = DenseLayer::xavier(300, 10, rng);
  for (double v : d.bias.raw()) EXPECT_EQ(v, 0.0);
  ConvBlockLayer c = ConvBlockLayer::xavier(3, 8, 3, rng);
  for (double v : c.bias.raw()) EXPECT_EQ(v, 0.0);
  for (double v : c.norm.gamma.raw()) EXPECT_EQ(v, 1.0);
  for (double v : c.norm.beta.raw()) EXPECT_EQ(v, 0.0);
}

TEST(Dense, IdentityAndBiasOnly) {
  Tape tape;
  Tensor x = testutil::random_tensor({4, 3}, 1);
  Tensor eye({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  EXPECT_EQ(nn::dense(tape.constant(x), tape.constant(eye), tape.constant(Tensor({3}))).value(), x);
  Var out = nn::dense(tape.constant(x), tape.constant(Tensor({3, 2})), tape.constant(Tensor::vector({1, 2})));
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(out.value().at(r, 0), 1.0);
    EXPECT_EQ(out.value().at(r, 1), 2.0);
  }
  EXPECT_THROW(nn::dense(tape.constant(x), tape.constant(Tensor({4, 2})), tape.constant(Tensor({2}))),
               DimensionError);
}

TEST(BatchNorm, StandardizedBatchIsFixedPoint) {
  Tape tape;
  Tensor x = Tensor::matrix({{1, -1}, {-1, 1}, {1, 1}, {-1, -1}});
  BatchNormLayer layer = BatchNormLayer::fresh(2);
  Var y = nn::batchnorm(tape.constant(x), tape.constant(layer.gamma), tape.constant(layer.beta), layer,
                        Mode::Train);
  EXPECT_LT(testutil::max_abs_diff(y.value(), x), 1e-5);
  // Running mean moves 0.1 towards a zero batch mean; variance towards 1.
  EXPECT_EQ(layer.running_mean, Tensor({2}));
}

TEST(BatchNorm, ConstantBatchGivesBeta) {
  Tape tape;
  BatchNormLayer layer = BatchNormLayer::fresh(3);
  layer.beta = Tensor::vector({0.5, -2, 7});
  Var y = nn::batchnorm(tape.constant(Tensor({5, 3}, 4.2)), tape.constant(layer.gamma),
                        tape.constant(layer.beta), layer, Mode::Train);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(y.value().at(r, c), layer.beta[c]);
}

TEST(BatchNorm, RunningMeanUpdate) {
  Tape tape;
  BatchNormLayer layer = BatchNormLayer::fresh(1);
  nn::batchnorm(tape.constant(Tensor::matrix({{2}, {4}})), tape.constant(layer.gamma), tape.constant(layer.beta),
                layer, Mode::Train);
  EXPECT_DOUBLE_EQ(layer.running_mean[0], 0.1 * 3.0);
}

TEST(BatchNorm, EvalUsesRunningStatistics) {
  Tape tape;
  BatchNormLayer layer = BatchNormLayer::fresh(1);
  layer.running_mean = Tensor::vector({1});
  layer.running_var = Tensor::vector({4});
  Var y = nn::batchnorm(tape.constant(Tensor::matrix({{5}})), tape.constant(layer.gamma), tape.constant(layer.beta),
                        layer, Mode::Eval);
  EXPECT_NEAR(y.value()[0], 4.0 / std::sqrt(4.0 + kBatchNormEps), 1e-12);
}

TEST(BatchNorm, SingleSampleTrainIsContractError) {
  Tape tape;
  BatchNormLayer layer = BatchNormLayer::fresh(2);
  EXPECT_THROW(nn::batchnorm(tape.constant(Tensor({1, 2})), tape.constant(layer.gamma), tape.constant(layer.beta),
                             layer, Mode::Train),
               ContractError);
}

TEST(Dropout, ZeroRateAndEvalAreIdentity) {
  Tape tape;
  Rng rng(1);
  Tensor x = testutil::random_tensor({10, 10}, 2);
  EXPECT_EQ(nn::dropout(tape.constant(x), 0.0, Mode::Train, rng).value(), x);
  EXPECT_EQ(nn::dropout(tape.constant(x), 0.9, Mode::Eval, rng).value(), x);
}

TEST(Dropout, KeepRateAndScaling) {
  Tape tape;
  Rng rng(7);
  Var y = nn::dropout(tape.constant(Tensor({100000}, 1.0)), 0.5, Mode::Train, rng);
  std::size_t kept = 0;
  for (double v : y.value().raw()) {
    if (v != 0.0) {
      ++kept;
      EXPECT_EQ(v, 2.0);
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 100000.0, 0.5, 0.01);
}

TEST(Dropout, RateOutOfRangeIsConfigError) {
  Tape tape;
  Rng rng(1);
  Var x = tape.constant(Tensor({3}, 1.0));
  EXPECT_THROW(nn::dropout(x, 1.0, Mode::Train, rng), ConfigError);
  EXPECT_THROW(nn::dropout(x, -0.1, Mode::Train, rng), ConfigError);
}

TEST(Softmax, UniformShiftAndStability) {
  Tape tape;
  Var u = nn::softmax_rows(tape.constant(Tensor({2, 5}, 3.0)));
  for (double v : u.value().raw()) EXPECT_NEAR(v, 0.2, 1e-15);

  Tensor x = testutil::random_tensor({4, 6}, 3, -1e3, 1e3);
  Tensor shifted = x;
  for (std::size_t c = 0; c < 6; ++c) shifted.at(1, c) += 123.0;
  Var a = nn::softmax_rows(tape.constant(x));
  Var b = nn::softmax_rows(tape.constant(shifted));
  for (std::size_t r = 0; r < 4; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < 6; ++c) sum += a.value().at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(a.value().at(1, c), b.value().at(1, c), 1e-12);
}
