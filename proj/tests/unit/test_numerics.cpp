#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "muser/error.hpp"
#include "muser/numerics/adam.hpp"
#include "muser/numerics/grad_check.hpp"
#include "muser/numerics/nn.hpp"
#include "muser/numerics/ops.hpp"

using namespace muser;
using namespace muser::num;

namespace {

Tensor random(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return normal_tensor({r, c}, 1.0, rng);
}

}  // namespace

TEST(Backward, TanhAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.0), true);
  tape.backward(sum(tanh(x)));
  EXPECT_DOUBLE_EQ(tape.grad(x.id())[0], 1.0);
}

TEST(Backward, SumOfProductWithIdentity) {
  Tape tape;
  const Tensor I = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Var a = tape.leaf(I, true);
  Var b = tape.leaf(I, true);
  tape.backward(sum(matmul(a, b)));
  // d sum(AB)/dA = 1 1^T B^T
  const Tensor expect = Tensor::matrix(2, 2, {1, 1, 1, 1});
  EXPECT_EQ(tape.grad(a.id()), expect);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(random(2, 2, 1), true);
  EXPECT_THROW(tape.backward(tanh(x)), UsageError);
}

TEST(Backward, UnregisteredPrimitiveRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(1.0), true);
  Var y = tape.record("not_a_primitive", Tensor::scalar(1.0), {x}, [](Tape&, std::uint32_t) {});
  EXPECT_THROW(tape.backward(y), UsageError);
}

TEST(Backward, ThreeLayerMlpMatchesFiniteDifferences) {
  Rng rng(4);
  Linear l1("l1", 5, 8, rng), l2("l2", 8, 8, rng), l3("l3", 8, 3, rng);
  const Tensor x = random(4, 5, 9);
  auto loss = [&](Tape& t) {
    Var h = tanh(l1(t.constant(x)));
    h = elu(l2(h));
    return mean(mul(l3(h), l3(h)));
  };
  ParamList params;
  l1.collect(params);
  l2.collect(params);
  l3.collect(params);
  EXPECT_LT(grad_check_params(loss, params, 1e-6, 0, 1).max_rel_error, 1e-4);
}

TEST(Backward, LinearityOfGradients) {
  const Tensor x0 = random(3, 4, 2);
  auto f1 = [](Var x) { return sum(tanh(x)); };
  auto f2 = [](Var x) { return mean(mul(x, x)); };
  auto grad_of = [&](auto&& f) {
    Tape t;
    Var x = t.leaf(x0, true);
    t.backward(f(x));
    return t.grad(x.id());
  };
  const Tensor g1 = grad_of(f1), g2 = grad_of(f2);
  const Tensor g = grad_of([&](Var x) { return add(f1(x), f2(x)); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], g1[i] + g2[i], 1e-14);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Rng rng(1);
  Parameter p("p", normal_tensor({2, 2}, 1.0, rng));
  p.zero_grad();
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(sum(mul(t.param(p), t.param(p))));
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.grad[i], 4.0 * p.value[i], 1e-14);
}

TEST(GradCheck, Quadratic) {
  const auto r = grad_check([](Var x) { return sum(mul(x, x)); }, Tensor::scalar(3.0));
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, SoftmaxCrossEntropy) {
  const std::vector<std::int32_t> target = {2};
  const auto r = grad_check([&](Var x) { return cross_entropy(x, target); }, Tensor::matrix(1, 3, {0.3, -1.2, 0.8}));
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, EpsilonRange) {
  auto f = [](Var x) { return sum(x); };
  EXPECT_THROW(grad_check(f, Tensor::scalar(1.0), 1e-2), UsageError);
  EXPECT_THROW(grad_check(f, Tensor::scalar(1.0), 1e-10), UsageError);
}

TEST(GradCheck, NonFiniteProbeIsFault) {
  auto f = [](Var x) { return sum(scale(x, std::numeric_limits<double>::infinity())); };
  EXPECT_THROW(grad_check(f, Tensor::scalar(1.0)), NumericFault);
}

TEST(GradCheck, EveryRegisteredPrimitive) {
  const auto checks = check_primitives(11);
  std::set<std::string> seen;
  for (const auto& c : checks) {
    EXPECT_LT(c.result.max_rel_error, 1e-4) << c.primitive << " at " << c.result.worst;
    seen.insert(c.primitive);
  }
  for (const char* op : {"matmul", "add", "sub", "mul", "scale", "tanh", "elu", "abs", "layer_norm", "embedding",
                         "softmax", "cross_entropy", "concat_cols", "slice_cols", "concat_rows", "gather_rows",
                         "shift_rows", "transpose", "block_transpose", "reshape", "sum", "mean", "dropout",
                         "straight_through", "pairwise_diff", "linear_attention"}) {
    EXPECT_TRUE(seen.count(op)) << op;
    EXPECT_TRUE(is_registered_primitive(op)) << op;
  }
}

TEST(Softmax, RowsSumToOne) {
  Tape t(TapeOptions{.grad_enabled = false});
  const Tensor p = softmax(t.leaf(random(6, 9, 3))).value();
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (double v : p.row(r)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(CrossEntropy, ZeroWeightRowsIgnored) {
  Tape t;
  const Tensor logits = random(3, 4, 5);
  const std::vector<std::int32_t> tgt = {0, 1, 2};
  const std::vector<double> w = {1.0, 0.0, 1.0};
  const double full = cross_entropy(t.leaf(logits), tgt, w).value().item();
  Tensor other = logits;
  for (double& v : other.row(1)) v = 100.0;
  EXPECT_DOUBLE_EQ(cross_entropy(t.leaf(other), tgt, w).value().item(), full);
}

TEST(LinearAttention, SingleStepReturnsValue) {
  Tape t;
  const Tensor v = random(1, 4, 1);
  const Var out = linear_attention(t.leaf(random(1, 4, 2)), t.leaf(random(1, 4, 3)), t.leaf(v), true);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.value()[i], v[i], 1e-12);
}

TEST(LinearAttention, EqualKeysAverageValues) {
  Tape t;
  const Tensor k = Tensor::matrix(2, 2, {0.3, -0.4, 0.3, -0.4});
  const Tensor v = Tensor::matrix(2, 2, {1.0, 2.0, 3.0, -2.0});
  const Var out = linear_attention(t.leaf(random(2, 2, 5)), t.leaf(k), t.leaf(v), true);
  EXPECT_NEAR(out.value().at(1, 0), 2.0, 1e-12);
  EXPECT_NEAR(out.value().at(1, 1), 0.0, 1e-12);
}

TEST(LinearAttention, NonCausalPermutationEquivariance) {
  Tape t;
  const Tensor q = random(5, 4, 1), k = random(5, 4, 2), v = random(5, 4, 3);
  Tensor kp = k, vp = v;
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      kp.at(r, c) = k.at(perm[r], c);
      vp.at(r, c) = v.at(perm[r], c);
    }
  }
  const Tensor a = linear_attention(t.leaf(q), t.leaf(k), t.leaf(v), false).value();
  const Tensor b = linear_attention(t.leaf(q), t.leaf(kp), t.leaf(vp), false).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(LinearAttention, CausalIgnoresFuture) {
  Tape t;
  const Tensor q = random(6, 4, 1), k = random(6, 4, 2), v = random(6, 4, 3);
  Tensor q2 = q, k2 = k, v2 = v;
  for (std::size_t c = 0; c < 4; ++c) {
    q2.at(4, c) += 1.0;
    k2.at(5, c) -= 2.0;
    v2.at(4, c) *= 3.0;
  }
  const LinearAttentionOptions o{.heads = 2, .causal = true};
  const Tensor a = linear_attention(t.leaf(q), t.leaf(k), t.leaf(v), o).value();
  const Tensor b = linear_attention(t.leaf(q2), t.leaf(k2), t.leaf(v2), o).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(a.at(r, c), b.at(r, c));
}

TEST(LinearAttention, ZeroLengthRejected) {
  Tape t;
  const Tensor empty({0, 4});
  EXPECT_THROW(linear_attention(t.leaf(empty), t.leaf(empty), t.leaf(empty), true), UsageError);
}

TEST(Adam, ZeroGradientLeavesParams) {
  Rng rng(1);
  Parameter p("p", normal_tensor({2, 3}, 1.0, rng));
  const Tensor before = p.value;
  p.zero_grad();
  AdamState s;
  Parameter* ps[] = {&p};
  const auto r = adam_step(ps, s, 1e-3);
  EXPECT_TRUE(r.applied);
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepHandValue) {
  Parameter p("p", Tensor::scalar(0.5));
  p.grad = Tensor::scalar(1.0);
  AdamState s;
  Parameter* ps[] = {&p};
  adam_step(ps, s, 0.001);
  // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
  EXPECT_NEAR(p.value[0] - 0.5, -0.001 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, SecondIdenticalStepNotLarger) {
  Parameter p("p", Tensor::scalar(0.0));
  AdamState s;
  Parameter* ps[] = {&p};
  p.grad = Tensor::scalar(0.3);
  adam_step(ps, s, 0.01);
  const double d1 = std::fabs(p.value[0]);
  const double mid = p.value[0];
  p.grad = Tensor::scalar(0.3);
  adam_step(ps, s, 0.01);
  EXPECT_LE(std::fabs(p.value[0] - mid), d1 * (1 + 1e-6));
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  Parameter p("p", Tensor::scalar(1.0));
  p.grad = Tensor::scalar(std::nan(""));
  AdamState s;
  Parameter* ps[] = {&p};
  const auto r = adam_step(ps, s, 1e-3);
  EXPECT_FALSE(r.applied);
  EXPECT_FALSE(r.message.empty());
  EXPECT_EQ(p.value[0], 1.0);
}

TEST(Precision, F32MatmulCloseToF64) {
  const Tensor a = random(8, 16, 1), b = random(16, 4, 2);
  Tape t64, t32(TapeOptions{.precision = Precision::f32});
  const Tensor x = matmul(t64.leaf(a), t64.leaf(b)).value();
  const Tensor y = matmul(t32.leaf(a), t32.leaf(b)).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-4);
}

TEST(Dropout, IdentityOutsideTraining) {
  Tape t;
  const Tensor x = random(4, 4, 1);
  EXPECT_EQ(dropout(t.leaf(x), 0.5).value(), x);
}
