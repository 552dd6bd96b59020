#include <gtest/gtest.h>

#include <cmath>

#include "dyntask/errors.hpp"
#include "dyntask/gradcheck.hpp"
#include "dyntask/ops.hpp"
#include "helpers.hpp"

using namespace dyntask;

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({2}).item(), ContractError);
  EXPECT_EQ(Tensor::scalar(4).item(), 4);
}

TEST(Matmul, IdentityAndHandValue) {
  Tape tape;
  Var eye = tape.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var x = tape.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  EXPECT_EQ(ag::matmul(eye, x).value(), x.value());
  Var v = tape.constant(Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(ag::matmul(x, v).value(), Tensor::matrix({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    ag::matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  GradCheckCase c = make_gradcheck_case("matmul", 3);
  EXPECT_LT(run_gradcheck(c, 3).max_rel_error, 1e-6);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Tape tape;
  Tensor img = testutil::random_tensor({2, 1, 4, 4}, 1);
  Var out = ag::conv2d(tape.constant(img), tape.constant(Tensor({1, 1, 1, 1}, 1.0)), 1, 0);
  EXPECT_EQ(out.value().reshaped(img.shape()), img);
}

TEST(Conv2d, OnesKernelCountsNine) {
  Tape tape;
  Var out = ag::conv2d(tape.constant(Tensor({1, 1, 5, 5}, 1.0)), tape.constant(Tensor({1, 1, 3, 3}, 1.0)), 1, 0);
  EXPECT_EQ(out.value().shape(), (Shape{1, 1, 3, 3}));
  for (double v : out.value().raw()) EXPECT_EQ(v, 9.0);
}

TEST(Conv2d, OutputSizeFormula) {
  Tape tape;
  Var out = ag::conv2d(tape.constant(Tensor({1, 2, 7, 6}, 1.0)), tape.constant(Tensor({3, 2, 3, 3}, 1.0)), 2, 1);
  EXPECT_EQ(out.value().shape(), (Shape{1, 3, (7 + 2 - 3) / 2 + 1, (6 + 2 - 3) / 2 + 1}));
}

TEST(Conv2d, InvalidGeometryIsConfigError) {
  Tape tape;
  Var x = tape.constant(Tensor({1, 1, 5, 5}));
  Var k = tape.constant(Tensor({1, 1, 3, 3}));
  EXPECT_THROW(ag::conv2d(x, k, 0, 0), ConfigError);
  EXPECT_THROW(ag::conv2d(x, k, 1, 3), ConfigError);
  EXPECT_THROW(ag::conv2d(tape.constant(Tensor({1, 1, 2, 2})), k, 1, 0), ConfigError);
  EXPECT_THROW(ag::conv2d(x, tape.constant(Tensor({1, 2, 3, 3})), 1, 0), DimensionError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  EXPECT_LT(run_gradcheck(make_gradcheck_case("conv2d", 5), 5).max_rel_error, 1e-5);
  EXPECT_LT(run_gradcheck(make_gradcheck_case("conv2d_stride2", 5), 5).max_rel_error, 1e-5);
}

TEST(Elementwise, ReluValuesAndKinkGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1, 0, 2}));
  Var y = ag::relu(x);
  EXPECT_EQ(y.value(), Tensor::vector({0, 0, 2}));
  tape.backward(ag::reduce_sum(y));
  EXPECT_EQ(tape.grad(x), Tensor::vector({0, 0, 1}));
}

TEST(Elementwise, ReduceSumGradientIsOnes) {
  Tape tape;
  Var x = tape.leaf(Tensor({2, 3}));
  Var s = ag::reduce_sum(x);
  EXPECT_EQ(s.value().item(), 0.0);
  tape.backward(s);
  EXPECT_EQ(tape.grad(x), Tensor({2, 3}, 1.0));
}

TEST(Elementwise, ExpLogRoundTrip) {
  Tape tape;
  Tensor x = testutil::random_tensor({10}, 2, 0.01, 50.0);
  Var y = ag::log(ag::exp(tape.constant(x)));
  EXPECT_LT(testutil::max_abs_diff(y.value(), x), 1e-12);
}

TEST(Elementwise, DomainErrors) {
  Tape tape;
  EXPECT_THROW(ag::log(tape.constant(Tensor::vector({1, 0}))), DomainError);
  EXPECT_THROW(ag::sqrt(tape.constant(Tensor::vector({-1, 2}))), DomainError);
}

TEST(Elementwise, BroadcastOnlyScalarOrSameShape) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}, 1.0));
  EXPECT_NO_THROW(ag::add(a, tape.constant(Tensor::scalar(2))));
  EXPECT_NO_THROW(ag::mul(tape.constant(Tensor::scalar(2)), a));
  EXPECT_THROW(ag::add(a, tape.constant(Tensor({3}, 1.0))), DimensionError);
}

TEST(Elementwise, NonFiniteResultIsNumericalError) {
  Tape tape;
  EXPECT_THROW(ag::exp(tape.constant(Tensor::vector({1000}))), NumericalError);
}

TEST(Backward, LeafLossHasUnitGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3));
  tape.backward(x);
  EXPECT_EQ(tape.grad(x).item(), 1.0);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(ag::reduce_sum(ag::square(x)));
  EXPECT_EQ(tape.grad(x), Tensor::vector({2, 4}));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, UnreachableNodesGetZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  Var unused = tape.leaf(Tensor::vector({5, 6, 7}));
  tape.backward(ag::reduce_sum(x));
  EXPECT_EQ(tape.grad(unused), Tensor({3}));
}

TEST(Backward, GradBeforeBackwardIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.grad(x), ContractError);
}

TEST(Backward, SumOfLossesIsSumOfGradients) {
  Tensor a = testutil::random_tensor({3, 4}, 11), b = testutil::random_tensor({4, 2}, 12);
  auto grads = [&](int which) {
    Tape tape;
    Var x = tape.leaf(a), w = tape.leaf(b);
    Var y = ag::matmul(x, w);
    Var l1 = ag::reduce_sum(ag::square(y));
    Var l2 = ag::reduce_sum(ag::exp(ag::scale(y, 0.3)));
    tape.backward(which == 0 ? l1 : which == 1 ? l2 : ag::add(l1, l2));
    return std::pair{tape.grad(x), tape.grad(w)};
  };
  auto [g1x, g1w] = grads(0);
  auto [g2x, g2w] = grads(1);
  auto [gx, gw] = grads(2);
  for (std::size_t i = 0; i < gx.numel(); ++i) EXPECT_NEAR(gx[i], g1x[i] + g2x[i], 1e-12);
  for (std::size_t i = 0; i < gw.numel(); ++i) EXPECT_NEAR(gw[i], g1w[i] + g2w[i], 1e-12);
}

TEST(Backward, SameTapeTwiceIsBitIdentical) {
  auto run = [] {
    Tape tape;
    Var x = tape.leaf(testutil::random_tensor({2, 3, 6, 6}, 7));
    Var k = tape.leaf(testutil::random_tensor({4, 3, 3, 3}, 8));
    Var y = ag::maxpool2x2(ag::relu(ag::conv2d(x, k, 1, 1)));
    tape.backward(ag::reduce_sum(ag::square(y)));
    return std::tuple{y.value(), tape.grad(x), tape.grad(k)};
  };
  EXPECT_EQ(run(), run());
}

TEST(Ops, SoftmaxAndRowOps) {
  Tape tape;
  Var s = ag::softmax_rows(tape.constant(Tensor::matrix({{std::log(3.0), 0.0}})));
  EXPECT_NEAR(s.value()[0], 0.75, 1e-15);
  EXPECT_NEAR(s.value()[1], 0.25, 1e-15);
  Var r = ag::sub_rowmax(tape.constant(Tensor::matrix({{1, 5, 2}, {-1, -3, -2}})));
  EXPECT_EQ(r.value(), Tensor::matrix({{-4, 0, -3}, {0, -2, -1}}));
  std::vector<std::size_t> labels{2, 0};
  Var g = ag::gather_cols(tape.constant(Tensor::matrix({{1, 5, 2}, {-1, -3, -2}})), labels);
  EXPECT_EQ(g.value(), Tensor::matrix({{2}, {-1}}));
  std::vector<std::size_t> bad{0, 3};
  EXPECT_THROW(ag::gather_cols(tape.constant(Tensor({2, 3})), bad), DataError);
}

TEST(Ops, MaxpoolFloorsOddExtents) {
  Tape tape;
  Var y = ag::maxpool2x2(tape.constant(testutil::random_tensor({1, 2, 5, 7}, 4)));
  EXPECT_EQ(y.value().shape(), (Shape{1, 2, 2, 3}));
}

TEST(Ops, PairwiseDistance) {
  Tape tape;
  Var d = ag::pairwise_distance(tape.constant(Tensor::matrix({{0, 0}, {3, 4}})),
                                tape.constant(Tensor::matrix({{0, 0}, {6, 8}, {3, 0}})));
  EXPECT_EQ(d.value(), Tensor::matrix({{0, 10, 3}, {5, 5, 4}}));
}

class RegisteredOp : public ::testing::TestWithParam<std::string> {};

TEST_P(RegisteredOp, PassesFiniteDifferencesOverTenSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const GradCheckResult r = run_gradcheck(make_gradcheck_case(GetParam(), seed), seed);
    EXPECT_TRUE(r.passed) << r.name << " seed " << seed << " err " << r.max_rel_error;
  }
}

INSTANTIATE_TEST_SUITE_P(All, RegisteredOp, ::testing::ValuesIn(gradcheck_names()),
                         [](const auto& info) { return info.param; });

TEST(GradCheck, DetectsInjectedSignError) {
  // Test double: square whose backward has the wrong sign.
  GradCheckCase c;
  c.name = "faulty_square";
  c.inputs = {testutil::random_tensor({3, 3}, 9)};
  c.build = [](Tape& tape, const std::vector<Tensor>& in) {
    Var x = tape.leaf(in[0]);
    Tensor v = in[0];
    for (double& e : v.raw()) e = e * e;
    Var y = tape.push("faulty_square", v, {x.id}, [](Tape& t, std::size_t self) {
      const Tensor& g = t.grad_slot(self);
      const std::size_t src = t.inputs(self)[0];
      Tensor& gx = t.grad_slot(src);
      for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += -2.0 * t.value(src)[i] * g[i];
    });
    return std::pair{y, std::vector<Var>{x}};
  };
  const GradCheckResult r = run_gradcheck(c, 1);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_rel_error, 1.0);
}

TEST(GradCheck, RegistryCoversLosses) {
  const auto& names = gradcheck_names();
  for (const auto& l : gradcheck_loss_names()) {
    EXPECT_NE(std::find(names.begin(), names.end(), l), names.end()) << l;
  }
  EXPECT_THROW(make_gradcheck_case("nope", 1), ConfigError);
}
