#include <cmath>
#include <cstring>
#include <numeric>

#include <gtest/gtest.h>

#include "lrmt/autodiff.hpp"
#include "lrmt/optim.hpp"
#include "support/gradcheck.hpp"

using namespace lrmt;

namespace {

std::vector<long double> softmax_oracle(const std::vector<double>& v) {
  long double total = 0;
  std::vector<long double> e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(v[i]));
    total += e[i];
  }
  for (auto& x : e) x /= total;
  return e;
}

Parameter param_of(std::vector<std::size_t> shape, std::vector<Real> data) {
  return Parameter("p", Tensor(std::move(shape), std::move(data)));
}

}  // namespace

TEST(Tensor, DataLengthMatchesShape) {
  Tensor t({3, 4}, 1.5);
  EXPECT_EQ(t.size(), 12u);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_THROW(Tensor({2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor({2, 2}, std::vector<Real>{1, 2, 3}), std::invalid_argument);
}

TEST(Rng, StateRoundTrip) {
  Rng a(42);
  a.next_u64();
  Rng b(7);
  b.set_state(a.state());
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_THROW(b.set_state("xyz"), std::invalid_argument);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(3);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Softmax, UniformOnEqualInputs) {
  auto p = softmax(std::vector<Real>{0, 0, 0});
  for (Real x : p) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Softmax, AnalyticTwoClass) {
  auto p = softmax(std::vector<Real>{0, std::log(2.0)});
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, MatchesExtendedPrecision) {
  Rng rng(11);
  std::vector<Real> v(16);
  for (Real& x : v) x = rng.uniform(-8, 8);
  auto p = softmax(v);
  auto q = softmax_oracle(v);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(p[i], static_cast<double>(q[i]), 1e-12);
}

TEST(Softmax, EmptyThrows) { EXPECT_THROW(softmax(std::vector<Real>{}), std::invalid_argument); }

TEST(Softmax, SumsToOneAndShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Real> v(1 + rng.below(30));
    for (Real& x : v) x = rng.uniform(-50, 50);
    auto p = softmax(v);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    const Real c = rng.uniform(-100, 100);
    std::vector<Real> w(v);
    for (Real& x : w) x += c;
    auto q = softmax(w);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_GT(p[i], 0.0);
      EXPECT_NEAR(p[i], q[i], 1e-12);
    }
  }
}

TEST(CrossEntropy, UniformLogits) {
  Graph g;
  Var l = g.constant(Tensor::matrix(1, 4, 0.0));
  const int t[] = {2};
  EXPECT_NEAR(g.value(ops::cross_entropy_masked(g, l, t, 0))[0], std::log(4.0), 1e-15);
}

TEST(CrossEntropy, FullyMaskedIsZeroWithZeroGradient) {
  Parameter p = param_of({3, 5}, std::vector<Real>(15, 0.3));
  Graph g;
  const int t[] = {0, 0, 0};
  Var loss = ops::cross_entropy_masked(g, g.param(p), t, 0);
  EXPECT_EQ(g.value(loss)[0], 0.0);
  g.backward(loss);
  for (Real x : p.grad.storage()) EXPECT_EQ(x, 0.0);
}

TEST(CrossEntropy, MatchesScalarLoopAndMasksPads) {
  Rng rng(9);
  Parameter p("logits", check::random_tensor({5, 7}, rng, -3, 3));
  const int targets[] = {3, 0, 6, 1, 0};
  double expect = 0.0;
  int count = 0;
  for (int r = 0; r < 5; ++r) {
    if (targets[r] == 0) continue;
    long double z = 0;
    for (int c = 0; c < 7; ++c) z += std::exp(static_cast<long double>(p.value(r, c)));
    expect += static_cast<double>(std::log(z)) - p.value(r, targets[r]);
    ++count;
  }
  expect /= count;
  Graph g;
  Var loss = ops::cross_entropy_masked(g, g.param(p), targets, 0);
  EXPECT_NEAR(g.value(loss)[0], expect, 1e-12);
  g.backward(loss);
  for (int r : {1, 4}) {
    for (int c = 0; c < 7; ++c) EXPECT_EQ(p.grad(r, c), 0.0);
  }
}

TEST(CrossEntropy, OutOfRangeTargetThrows) {
  Graph g;
  Var l = g.constant(Tensor::matrix(1, 4));
  const int t[] = {4};
  EXPECT_THROW(ops::cross_entropy_masked(g, l, t, 0), std::out_of_range);
}

TEST(ClipGradNorm, ScalesToMax) {
  Parameter p = param_of({2}, {0, 0});
  p.grad = Tensor::vector({6, 8});
  Parameter* ps[] = {&p};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 5.0), 0.5);
  EXPECT_DOUBLE_EQ(p.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 4.0);
}

TEST(ClipGradNorm, UnderThresholdUnchanged) {
  Parameter p = param_of({2}, {0, 0});
  p.grad = Tensor::vector({0, 3});
  Parameter* ps[] = {&p};
  EXPECT_EQ(clip_grad_norm(ps, 5.0), 1.0);
  EXPECT_EQ(p.grad[1], 3.0);
  EXPECT_EQ(clip_grad_norm(std::span<Parameter* const>{}, 5.0), 1.0);
  EXPECT_THROW(clip_grad_norm(ps, 0.0), std::invalid_argument);
}

TEST(ClipGradNorm, RandomSetsAndIdempotence) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Parameter> params;
    for (int i = 0; i < 3; ++i) {
      params.emplace_back("p", Tensor({2 + rng.below(4), 3}, 0.0));
      params.back().grad = check::random_tensor(params.back().value.shape(), rng, -4, 4);
    }
    std::vector<Parameter*> ps;
    for (auto& p : params) ps.push_back(&p);
    double prior = 0;
    for (auto& p : params) {
      for (Real x : p.grad.storage()) prior += x * x;
    }
    prior = std::sqrt(prior);
    clip_grad_norm(ps, 5.0);
    EXPECT_NEAR(grad_norm(ps), std::min(prior, 5.0), 1e-9);
    std::vector<Tensor> once;
    for (auto& p : params) once.push_back(p.grad);
    clip_grad_norm(ps, 5.0);
    for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(params[i].grad, once[i]);
  }
}

TEST(ClipGradNorm, IgnoresFrozenParametersAndRows) {
  Parameter a = param_of({2}, {0, 0});
  a.grad = Tensor::vector({6, 8});
  Parameter b = param_of({1}, {0});
  b.grad = Tensor::vector({100});
  b.frozen = true;
  Parameter c = param_of({2, 1}, {0, 0});
  c.grad = Tensor({2, 1}, std::vector<Real>{0, 1000});
  c.freeze_row(1);
  Parameter* ps[] = {&a, &b, &c};
  EXPECT_DOUBLE_EQ(grad_norm(ps), 10.0);
}

TEST(Adam, ZeroGradientIsFixedPoint) {
  Parameter p = param_of({3}, {0.5, -1, 2});
  const Tensor before = p.value;
  Adam opt({});
  Parameter* ps[] = {&p};
  opt.bind(ps);
  opt.step();
  EXPECT_EQ(p.value, before);
  EXPECT_EQ(opt.states()[0].t, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p = param_of({2}, {1, 1});
  p.grad = Tensor::vector({3.0, -0.5});
  Adam opt({});
  Parameter* ps[] = {&p};
  opt.bind(ps);
  opt.step();
  EXPECT_NEAR(p.value[0], 1 - 1e-3, 1e-10);
  EXPECT_NEAR(p.value[1], 1 + 1e-3, 1e-10);
}

TEST(Adam, ThreeStepScalarTrace) {
  AdamConfig cfg{.lr = 0.01, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .l2 = 0.1};
  const double grads[] = {0.7, -1.3, 0.2};
  double w = 0.4, m = 0, v = 0;
  Parameter p = param_of({1}, {0.4});
  Adam opt(cfg);
  Parameter* ps[] = {&p};
  opt.bind(ps);
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1] + cfg.l2 * w;
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mh = m / (1 - std::pow(cfg.beta1, t));
    const double vh = v / (1 - std::pow(cfg.beta2, t));
    w -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    p.grad[0] = grads[t - 1];
    opt.step();
    EXPECT_NEAR(p.value[0], w, 1e-12);
    EXPECT_EQ(opt.states()[0].t, t);
  }
}

TEST(Adam, FrozenParametersAndRowsUntouched) {
  Rng rng(4);
  Parameter a("a", check::random_tensor({3, 2}, rng));
  a.frozen = true;
  Parameter b("b", check::random_tensor({3, 2}, rng));
  b.freeze_row(1);
  const Tensor a0 = a.value, b0 = b.value;
  Adam opt({.lr = 0.1, .l2 = 0.5});
  Parameter* ps[] = {&a, &b};
  opt.bind(ps);
  for (int s = 0; s < 5; ++s) {
    a.grad = check::random_tensor({3, 2}, rng);
    b.grad = check::random_tensor({3, 2}, rng);
    opt.step();
  }
  EXPECT_EQ(std::memcmp(a.value.storage().data(), a0.storage().data(), 6 * sizeof(Real)), 0);
  for (Real x : opt.states()[0].m.storage()) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(b.value(1, 0), b0(1, 0));
  EXPECT_EQ(b.value(1, 1), b0(1, 1));
  EXPECT_NE(b.value(0, 0), b0(0, 0));
}

TEST(Adam, NonPositiveLearningRateRejected) {
  EXPECT_THROW(Adam({.lr = 0.0}), std::invalid_argument);
  Parameter p = param_of({1}, {0});
  AdamState s{Tensor({1}), Tensor({1}), 0};
  Parameter* ps[] = {&p};
  EXPECT_THROW(adam_step(ps, std::span<AdamState>(&s, 1), {.lr = -1.0}), std::invalid_argument);
}

TEST(Backward, LinearMapGivesOuterProduct) {
  Parameter W = param_of({2, 3}, {1, 2, 3, 4, 5, 6});
  Graph g;
  Var x = g.constant(Tensor({1, 3}, std::vector<Real>{0.5, -1, 2}));
  g.backward(ops::sum(g, ops::linear(g, x, g.param(W))));
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(W.grad(r, 0), 0.5);
    EXPECT_EQ(W.grad(r, 1), -1.0);
    EXPECT_EQ(W.grad(r, 2), 2.0);
  }
}

TEST(Backward, TanhSlopeAtZero) {
  Parameter x = param_of({1}, {0});
  Graph g;
  g.backward(ops::sum(g, ops::tanh(g, g.param(x))));
  EXPECT_EQ(x.grad[0], 1.0);
}

TEST(Backward, ContractErrors) {
  Graph empty;
  EXPECT_THROW(empty.backward(Var{0}), std::logic_error);
  Graph g;
  Var v = g.constant(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(v), std::invalid_argument);
}

TEST(Backward, UnreachableParametersStayZero) {
  Parameter used = param_of({1}, {2});
  Parameter unused = param_of({1}, {3});
  Graph g;
  Var a = g.param(used);
  g.param(unused);
  g.backward(ops::sum(g, ops::mul(g, a, a)));
  EXPECT_EQ(used.grad[0], 4.0);
  EXPECT_EQ(unused.grad[0], 0.0);
}
