#include <gtest/gtest.h>

#include <cmath>

#include "sama/ad.hpp"
#include "sama/grad_check.hpp"
#include "sama/ssm_ops.hpp"
#include "sama/verify.hpp"
#include "test_util.hpp"

using namespace sama;
using ad::Tape;
using ad::Var;

TEST(Tape, IdentityHasUnitGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  tape.backward(x);
  EXPECT_EQ(tape.grad(x)[0], 1.0);
}

TEST(Tape, ConstantOutputHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor::scalar(3.0));
  Var c = tape.constant(Tensor::scalar(2.0));
  Var y = ad::add(c, ad::scale(ad::sub(x, x), 1.0));
  tape.backward(y);
  EXPECT_EQ(tape.grad(x)[0], 0.0);
  EXPECT_FALSE(tape.needs_grad(c));
}

TEST(Tape, HandDerivedChain) {
  // y = sum(exp(x) * x), dy/dx = exp(x) (1 + x)
  Tape tape;
  Var x = tape.variable(Tensor({3}, {-1.0, 0.0, 0.5}));
  Var y = ad::sum(ad::mul(ad::exp(x), x));
  tape.backward(y);
  const Tensor g = tape.grad(x);
  for (std::size_t i = 0; i < 3; ++i) {
    const double xi = tape.value(x)[i];
    EXPECT_NEAR(g[i], std::exp(xi) * (1.0 + xi), 1e-15);
  }
}

TEST(Tape, FanOutAccumulates) {
  // y = x * x * x through two uses of the same node
  Tape tape;
  Var x = tape.variable(Tensor::scalar(2.0));
  Var y = ad::mul(ad::mul(x, x), x);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 12.0);
}

TEST(Tape, ParamsAccumulateIntoStore) {
  ParamStore store;
  auto& p = store.add("p", {2}, InitScheme::constant_value(1.5), 0);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    tape.backward(ad::sum(ad::scale(tape.param(p), 2.0)));
  }
  EXPECT_EQ(p.grad.data, (std::vector<double>{4.0, 4.0}));
}

TEST(Tape, DisabledGradKeepsParamsConstant) {
  ParamStore store;
  auto& p = store.add("p", {2}, InitScheme::constant_value(1.0), 0);
  Tape tape;
  tape.set_grad_enabled(false);
  Var y = ad::sum(tape.param(p));
  EXPECT_FALSE(tape.needs_grad(y));
  EXPECT_EQ(tape.value(y)[0], 2.0);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape tape;
  Var a = tape.variable(Tensor({2}));
  Var b = tape.variable(Tensor({3}));
  EXPECT_ANY_THROW(ad::add(a, b));
}

TEST(GradCheck, SquareIsExactToRoundoff) {
  TapeFn f = [](Tape&, std::span<const Var> v) { return ad::mul(v[0], v[0]); };
  auto rep = grad_check("square", f, {Tensor::scalar(3.0)}, {.step = 1e-5, .tol = 1e-8});
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
  EXPECT_LT(rep.max_abs_err, 1e-8);
}

TEST(GradCheck, SoftmaxSumHasZeroGradient) {
  Tape tape;
  Var x = tape.variable(Tensor({2, 4}, {0.1, -2.0, 3.0, 0.5, 1.0, 1.0, 1.0, -1.0}));
  tape.backward(ad::sum(ad::softmax_last(x)));
  for (double g : tape.grad(x).data) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(GradCheck, DetectsWrongGradient) {
  // forward doubles the value but the recorded VJP passes the cotangent through
  TapeFn f = [](Tape& tape, std::span<const Var> v) {
    Tensor out = tape.value(v[0]);
    for (auto& x : out.data) x *= 2.0;
    const Var in = v[0];
    return tape.record(out, {in}, [in](Tape& t, const Tensor& g) {
      Tensor* slot = t.grad_slot(in);
      if (!slot) return;
      for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
    });
  };
  auto rep = grad_check("broken", f, {Tensor({3}, {1.0, 2.0, 3.0})});
  EXPECT_FALSE(rep.pass);
}

TEST(GradCheck, ZohThenScanPipeline) {
  // delta -> (alpha, gain) -> b_bar -> scan, random 8-step input
  Rng rng(11);
  std::vector<Tensor> point = {
      tu::random_tensor({1, 8, 4}, rng),             // x, 2 heads of width 2
      tu::random_tensor({1, 8, 2}, rng, 0.05, 0.8),  // delta
      tu::random_tensor({2}, rng, -0.5, 0.5),        // a_log
      tu::random_tensor({1, 8, 3}, rng),             // b
      tu::random_tensor({1, 8, 3}, rng),             // c
  };
  TapeFn f = [](Tape&, std::span<const Var> v) {
    Var alpha = ssm::zoh_alpha(v[1], v[2]);
    Var b_bar = ssm::head_outer(ssm::zoh_gain(v[1], v[2]), v[3]);
    return ssm::ssd_scan(v[0], alpha, b_bar, v[4]);
  };
  auto rep = grad_check("zoh_scan", f, point);
  EXPECT_TRUE(rep.pass) << rep.max_rel_err;
}

class RegisteredOps : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(RegisteredOps, EveryOpPassesGradCheck) {
  for (auto& c : verify::op_cases(GetParam())) {
    auto rep = grad_check(c.name, c.fn, c.point, {.step = 1e-5, .tol = 1e-5});
    EXPECT_TRUE(rep.pass) << c.name << " rel err " << rep.max_rel_err;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RegisteredOps, ::testing::Range<std::uint64_t>(0, 10));

TEST(LinearAlgebra, AffineMatchesLoop) {
  Rng rng(2);
  Tape tape;
  const Tensor x = tu::random_tensor({2, 3, 4}, rng), w = tu::random_tensor({4, 5}, rng),
               b = tu::random_tensor({5}, rng);
  const Tensor y = tape.value(ad::affine(tape.constant(x), tape.constant(w), tape.constant(b)));
  ASSERT_EQ(y.shape, (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t o = 0; o < 5; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < 4; ++i) s += x[r * 4 + i] * w[i * 5 + o];
      EXPECT_NEAR(y[r * 5 + o], s, 1e-14);
    }
}

TEST(LinearAlgebra, LayerNormZeroMeanUnitVariance) {
  Rng rng(4);
  Tape tape;
  const Tensor x = tu::random_tensor({3, 8}, rng, -5.0, 5.0);
  const Tensor y =
      tape.value(ad::layer_norm(tape.constant(x), tape.constant(Tensor({8}, 1.0)), tape.constant(Tensor({8}, 0.0)), 0.0));
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 8; ++i) m += y[r * 8 + i] / 8.0;
    for (std::size_t i = 0; i < 8; ++i) v += (y[r * 8 + i] - m) * (y[r * 8 + i] - m) / 8.0;
    EXPECT_NEAR(m, 0.0, 1e-14);
    EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(Shape, ShiftPrevAndSwap) {
  Tape tape;
  Tensor x({1, 3, 2}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(tape.value(ad::shift_prev(tape.constant(x))).data, (std::vector<double>{0, 0, 1, 2, 3, 4}));
  Tensor y({1, 2, 3, 1}, {1, 2, 3, 4, 5, 6});
  const Tensor s = tape.value(ad::swap_axes12(tape.constant(y)));
  EXPECT_EQ(s.shape, (Shape{1, 3, 2, 1}));
  EXPECT_EQ(s.data, (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(Scalars, SoftplusStableAtExtremes) {
  EXPECT_DOUBLE_EQ(ad::softplus_value(800.0), 800.0);
  EXPECT_GT(ad::softplus_value(-800.0), -1.0);
  EXPECT_NEAR(ad::softplus_value(0.0), std::log(2.0), 1e-16);
  EXPECT_NEAR(ad::sigmoid_value(0.0), 0.5, 1e-16);
}
