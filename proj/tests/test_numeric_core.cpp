#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "fedstlf/core/adam.hpp"
#include "fedstlf/core/gradcheck.hpp"
#include "fedstlf/core/layers.hpp"
#include "fedstlf/core/ops.hpp"
#include "fedstlf/rng.hpp"

using namespace fedstlf;
using ops::Activation;
using ops::Mode;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Projects any node to a scalar with fixed random weights so every output
// element contributes to the checked gradient.
Var project(Tape& tape, Var y, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor w = random_tensor(tape.shape(y), rng);
  return ops::weighted_sum(tape, y, w);
}

void expect_gradients(std::vector<Parameter*> params, const std::function<Var(Tape&)>& loss, double tol = 1e-4) {
  const GradCheckResult r = finite_difference_check(params, loss, 1e-5, 64, 3);
  EXPECT_GT(r.coordinates, 0u);
  EXPECT_LT(r.max_relative_error, tol) << "worst parameter " << r.worst_parameter << " index " << r.worst_index
                                       << " backprop " << r.worst_backprop << " numeric " << r.worst_numeric;
}

}  // namespace

TEST(Tensor, RejectsZeroDimsAndWrongSizes) {
  EXPECT_THROW(Tensor(Shape{2, 0}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 3}).reshaped(Shape{4}), DimensionError);
  const Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.at(1, 2), 6.0);
  EXPECT_EQ(t.reshaped(Shape{3, 2}).at(2, 0), 5.0);
}

TEST(Dense, WorkedExamples) {
  Tape tape;
  auto run = [&](std::vector<double> x, std::vector<double> w, double b, Activation act, std::size_t in) {
    const Var y = ops::dense(tape, tape.constant(Tensor(Shape{1, in}, x)), tape.constant(Tensor(Shape{in, 1}, w)),
                             tape.constant(Tensor(Shape{1}, std::vector<double>{b})), act);
    return tape.value(y)[0];
  };
  EXPECT_EQ(run({1, 2}, {1, 1}, 0, Activation::none, 2), 3.0);
  EXPECT_EQ(run({-1}, {1}, 0, Activation::relu, 1), 0.0);
  EXPECT_DOUBLE_EQ(run({0.5}, {2}, 1, Activation::tanh, 1), std::tanh(2.0));
}

TEST(Dense, ShapeMismatchNamesBothShapes) {
  Tape tape;
  const Var x = tape.constant(Tensor(Shape{1, 3}));
  const Var w = tape.constant(Tensor(Shape{2, 1}));
  const Var b = tape.constant(Tensor(Shape{1}));
  try {
    ops::dense(tape, x, w, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[1, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 1]"), std::string::npos) << msg;
  }
}

TEST(Lstm, ZeroWeightsGiveZeroOutput) {
  Tape tape;
  Rng rng(1);
  const Var x = tape.constant(random_tensor(Shape{2, 5, 3}, rng));
  const Var y = ops::lstm(tape, x, tape.constant(Tensor(Shape{3, 8})), tape.constant(Tensor(Shape{2, 8})),
                          tape.constant(Tensor(Shape{8})), true);
  for (double v : tape.value(y).values()) EXPECT_EQ(v, 0.0);
}

TEST(Lstm, SingleStepMatchesHandEvaluation) {
  // One cell, one input: gate pre-activations are wx*x + b per gate (i, f, g, o).
  const double x = 0.7;
  const std::vector<double> wx{0.3, -0.2, 0.5, 0.9}, b{0.1, 0.2, -0.3, 0.05};
  Tape tape;
  const Var y = ops::lstm(tape, tape.constant(Tensor(Shape{1, 1, 1}, std::vector<double>{x})),
                          tape.constant(Tensor(Shape{1, 4}, wx)), tape.constant(Tensor(Shape{1, 4}, std::vector<double>{1, 1, 1, 1})),
                          tape.constant(Tensor(Shape{4}, b)), false);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double i = sig(wx[0] * x + b[0]);
  const double g = std::tanh(wx[2] * x + b[2]);
  const double o = sig(wx[3] * x + b[3]);
  const double c = i * g;  // forget gate multiplies the zero initial state
  EXPECT_NEAR(tape.value(y)[0], o * std::tanh(c), 1e-15);
}

TEST(Lstm, ShapeContracts) {
  Rng rng(2);
  layers::Lstm seq("l", 7, 32, true, rng);
  layers::Lstm last("m", 7, 32, false, rng);
  Tape tape;
  const Var x = tape.constant(random_tensor(Shape{2, 24, 7}, rng));
  EXPECT_EQ(tape.shape(seq.forward(tape, x)), (Shape{2, 24, 32}));
  EXPECT_EQ(tape.shape(last.forward(tape, x)), (Shape{2, 32}));
  EXPECT_THROW(layers::Lstm("z", 3, 0, true, rng), ConfigError);
}

TEST(Attention, ZeroQueryGivesUniformWeights) {
  Rng rng(4);
  layers::MultiHeadAttention mha("a", 4, 4, 2, 2, rng);
  mha.query().weight().value.fill(0.0);
  mha.query().bias().value.fill(0.0);
  Tape tape;
  const Tensor kv = random_tensor(Shape{1, 3, 4}, rng);
  Tensor weights;
  const Var y = mha.forward(tape, tape.constant(random_tensor(Shape{1, 2, 4}, rng)), tape.constant(kv), &weights);
  for (double w : weights.values()) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);

  // Output = output projection of the mean value projection, per query.
  Tape ref;
  const Var v = mha.value().forward(ref, ref.constant(kv));
  const Tensor& vv = ref.value(v);
  Tensor mean(Shape{1, 1, 4});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 4; ++c) mean[c] += vv[t * 4 + c] / 3.0;
  const Tensor& expected = ref.value(mha.output().forward(ref, ref.constant(mean)));
  for (std::size_t q = 0; q < 2; ++q)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(tape.value(y)[q * 4 + c], expected[c], 1e-12);
}

TEST(Attention, SingletonKeyHasWeightOne) {
  Tape tape;
  Rng rng(5);
  Tensor weights;
  ops::attention(tape, tape.constant(random_tensor(Shape{2, 1, 8}, rng, -5, 5)),
                 tape.constant(random_tensor(Shape{2, 1, 8}, rng, -5, 5)),
                 tape.constant(random_tensor(Shape{2, 1, 8}, rng)), 2, 4, &weights);
  for (double w : weights.values()) EXPECT_EQ(w, 1.0);
}

TEST(Attention, HandEvaluatedTwoByTwo) {
  // heads = head_size = 1: scores are q_i * k_j, scale 1.
  const std::vector<double> q{0.5, -1.0}, k{2.0, 0.3}, v{1.0, 4.0};
  Tape tape;
  const Var y = ops::attention(tape, tape.constant(Tensor(Shape{1, 2, 1}, q)), tape.constant(Tensor(Shape{1, 2, 1}, k)),
                               tape.constant(Tensor(Shape{1, 2, 1}, v)), 1, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    const double e0 = std::exp(q[i] * k[0]), e1 = std::exp(q[i] * k[1]);
    EXPECT_NEAR(tape.value(y)[i], (e0 * v[0] + e1 * v[1]) / (e0 + e1), 1e-15);
  }
}

TEST(Attention, RowsAreProbabilityDistributions) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor weights;
    ops::attention(tape, tape.constant(random_tensor(Shape{3, 5, 8}, rng, -4, 4)),
                   tape.constant(random_tensor(Shape{3, 7, 8}, rng, -4, 4)),
                   tape.constant(random_tensor(Shape{3, 7, 8}, rng)), 2, 4, &weights);
    for (std::size_t row = 0; row < weights.size() / 7; ++row) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(weights[row * 7 + j], 0.0);
        s += weights[row * 7 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(LayerNorm, WorkedExamples) {
  Tape tape;
  auto ln = [&](std::vector<double> x, double gain, double bias) {
    const std::size_t d = x.size();
    const Var y = ops::layer_norm(tape, tape.constant(Tensor(Shape{1, d}, x)), tape.constant(Tensor(Shape{d}, gain)),
                                  tape.constant(Tensor(Shape{d}, bias)));
    return tape.value(y).storage();
  };
  for (double v : ln({5, 5, 5}, 1, 0)) EXPECT_EQ(v, 0.0);
  const auto pair = ln({1, -1}, 1, 0);
  EXPECT_NEAR(pair[0], 1.0, 1e-5);
  EXPECT_NEAR(pair[1], -1.0, 1e-5);
  for (double v : ln({3, -2, 7.5}, 0, 0.25)) EXPECT_EQ(v, 0.25);
}

TEST(LayerNorm, SliceMomentsProperty) {
  Rng rng(7);
  Tape tape;
  const std::size_t d = 16;
  const Var y = ops::layer_norm(tape, tape.constant(random_tensor(Shape{10, d}, rng, -3, 3)),
                                tape.constant(Tensor(Shape{d}, 1.0)), tape.constant(Tensor(Shape{d})));
  const Tensor& yv = tape.value(y);
  for (std::size_t r = 0; r < 10; ++r) {
    double m = 0.0, v = 0.0;
    for (std::size_t c = 0; c < d; ++c) m += yv[r * d + c] / d;
    for (std::size_t c = 0; c < d; ++c) v += (yv[r * d + c] - m) * (yv[r * d + c] - m) / d;
    EXPECT_LT(std::abs(m), 1e-9);
    // eps = 1e-5 shrinks the variance by var / (var + eps).
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(BatchNorm, TrainStandardizesTwoPoints) {
  Tape tape;
  layers::BatchNorm bn("bn", 1);
  const Var y = bn.forward(tape, tape.constant(Tensor(Shape{1, 2, 1}, std::vector<double>{1, 3})), Mode::train);
  const double expected = 1.0 / std::sqrt(1.0 + ops::kBatchNormEpsilon);
  EXPECT_NEAR(tape.value(y)[0], -expected, 1e-15);
  EXPECT_NEAR(tape.value(y)[1], expected, 1e-15);
  // Running statistics moved by (1 - momentum) toward the batch statistics.
  EXPECT_NEAR(bn.running_mean()[0], 0.01 * 2.0, 1e-15);
  EXPECT_NEAR(bn.running_var()[0], 0.99 + 0.01 * 1.0, 1e-15);
}

TEST(BatchNorm, InferWithInitialStatsIsNearIdentity) {
  Tape tape;
  layers::BatchNorm bn("bn", 3);
  Rng rng(8);
  const Tensor x = random_tensor(Shape{2, 4, 3}, rng);
  const Var y = bn.forward(tape, tape.constant(x), Mode::infer);
  const double s = 1.0 / std::sqrt(1.0 + ops::kBatchNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(tape.value(y)[i], x[i] * s, 1e-15);
}

TEST(BatchNorm, StandardizedInputUnchangedInTrainMode) {
  // Per-channel values {-1, 1}: mean 0, population variance 1.
  Tape tape;
  layers::BatchNorm bn("bn", 1);
  const Var y = bn.forward(tape, tape.constant(Tensor(Shape{2, 2, 1}, std::vector<double>{-1, 1, 1, -1})), Mode::train);
  const double s = 1.0 / std::sqrt(1.0 + ops::kBatchNormEpsilon);
  EXPECT_NEAR(tape.value(y)[0], -s, 1e-15);
  EXPECT_NEAR(tape.value(y)[1], s, 1e-15);
  EXPECT_NEAR(s, 1.0, 1e-3);
}

TEST(Conv1d, WorkedExamples) {
  Tape tape;
  auto conv = [&](std::vector<double> x, std::vector<double> k) {
    const Var y = ops::conv1d_same(tape, tape.constant(Tensor(Shape{1, x.size(), 1}, x)),
                                   tape.constant(Tensor(Shape{3, 1, 1}, k)), tape.constant(Tensor(Shape{1})));
    return tape.value(y).storage();
  };
  const std::vector<double> x{0.5, -2.0, 3.0, 1.25};
  EXPECT_EQ(conv(x, {0, 1, 0}), x);
  EXPECT_EQ(conv({1, 1, 1}, {1, 1, 1}), (std::vector<double>{2, 3, 2}));
  EXPECT_THROW(conv({1, 2}, {1, 1, 1}), ConfigError);

  Rng rng(9);
  layers::Conv1d layer("c", 3, 7, 32, rng);
  const Var y = layer.forward(tape, tape.constant(random_tensor(Shape{1, 24, 7}, rng)));
  EXPECT_EQ(tape.shape(y), (Shape{1, 24, 32}));
}

TEST(AvgPool, MeanOverTime) {
  Tape tape;
  EXPECT_EQ(tape.value(ops::mean_over_time(tape, tape.constant(Tensor(Shape{1, 2, 1}, std::vector<double>{1, 3}))))[0], 2.0);
  EXPECT_EQ(tape.value(ops::mean_over_time(tape, tape.constant(Tensor(Shape{1, 1, 2}, std::vector<double>{4, 5})))).storage(),
            (std::vector<double>{4, 5}));
  Rng rng(10);
  const Tensor x = random_tensor(Shape{2, 24, 8}, rng);
  const Tensor& y = tape.value(ops::mean_over_time(tape, tape.constant(x)));
  ASSERT_EQ(y.shape(), (Shape{2, 8}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 8; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < 24; ++t) s += x.at(b, t, c);
      EXPECT_NEAR(y.at(b, c), s / 24.0, 1e-15);
    }
}

TEST(Dropout, IdentityCasesAndExpectation) {
  Rng rng(11);
  Tape tape;
  const Tensor x = random_tensor(Shape{4, 4}, rng);
  EXPECT_EQ(tape.value(ops::dropout(tape, tape.constant(x), 0.0, Mode::train, rng)), x);
  EXPECT_EQ(tape.value(ops::dropout(tape, tape.constant(x), 0.2, Mode::infer, rng)), x);

  const Tensor ones(Shape{100000}, 1.0);
  const Tensor& y = tape.value(ops::dropout(tape, tape.constant(ones), 0.2, Mode::train, rng));
  double mean = 0.0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.25) < 1e-15);
    mean += v;
  }
  mean /= static_cast<double>(y.size());
  EXPECT_NEAR(mean, 1.0, 0.01);
  EXPECT_THROW(ops::dropout(tape, tape.constant(x), 1.0, Mode::train, rng), ConfigError);
}

TEST(MseLoss, ValueAndGradient) {
  Parameter p("p", Tensor(Shape{2}, std::vector<double>{0, 2}));
  Tape tape;
  const Var loss = ops::mse_loss(tape, tape.param(p), Tensor(Shape{2}, std::vector<double>{1, 1}));
  EXPECT_EQ(tape.value(loss)[0], 1.0);

  Parameter q("q", Tensor(Shape{1}, std::vector<double>{2}));
  q.zero_grad();
  Tape t2;
  t2.backward(ops::mse_loss(t2, t2.param(q), Tensor(Shape{1}, std::vector<double>{0})));
  EXPECT_EQ(q.grad[0], 4.0);
  EXPECT_THROW(ops::mse_loss(tape, tape.param(p), Tensor(Shape{3})), DimensionError);
}

TEST(Backprop, NonScalarLossRejected) {
  Tape tape;
  EXPECT_THROW(tape.backward(tape.constant(Tensor(Shape{2}))), DimensionError);
}

TEST(Backprop, UnusedParameterGetsZeroGradient) {
  Rng rng(12);
  layers::Dense used("u", 3, 2, Activation::tanh, rng), unused("n", 3, 2, Activation::none, rng);
  std::vector<Parameter*> ps;
  used.collect(ps);
  unused.collect(ps);
  for (auto* p : ps) p->zero_grad();
  Tape tape;
  tape.backward(project(tape, used.forward(tape, tape.constant(random_tensor(Shape{4, 3}, rng))), 1));
  for (double g : unused.weight().grad.values()) EXPECT_EQ(g, 0.0);
  for (double g : unused.bias().grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backprop, RepeatedPassesAreBitwiseIdentical) {
  Rng init(13);
  layers::Lstm l("l", 3, 4, true, init);
  std::vector<Parameter*> ps;
  l.collect(ps);
  const Tensor x = random_tensor(Shape{2, 6, 3}, init);
  auto grads = [&] {
    for (auto* p : ps) p->zero_grad();
    Tape tape;
    Rng rng(99);
    tape.backward(project(tape, ops::dropout(tape, l.forward(tape, tape.constant(x)), 0.2, Mode::train, rng), 5));
    std::vector<double> g;
    for (auto* p : ps) g.insert(g.end(), p->grad.storage().begin(), p->grad.storage().end());
    return g;
  };
  const auto a = grads(), b = grads();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

// Finite-difference checks per primitive, on shapes drawn from the three
// model configurations.

TEST(GradCheck, LinearModelIsExact) {
  Rng rng(20);
  layers::Dense d("d", 5, 3, Activation::none, rng);
  std::vector<Parameter*> ps;
  d.collect(ps);
  const Tensor x = random_tensor(Shape{4, 5}, rng);
  const GradCheckResult r = finite_difference_check(
      ps, [&](Tape& t) { return project(t, d.forward(t, t.constant(x)), 21); }, 1e-5, 64, 1);
  EXPECT_LT(r.max_relative_error, 1e-9);
}

TEST(GradCheck, DenseActivations) {
  for (Activation act : {Activation::relu, Activation::tanh, Activation::sigmoid}) {
    Rng rng(22);
    layers::Dense d("d", 8, 32, act, rng);
    std::vector<Parameter*> ps;
    d.collect(ps);
    const Tensor x = random_tensor(Shape{2, 24, 8}, rng);
    expect_gradients(ps, [&](Tape& t) { return project(t, d.forward(t, t.constant(x)), 23); });
  }
}

TEST(GradCheck, LstmBothOutputModes) {
  for (bool seq : {true, false}) {
    Rng rng(24);
    layers::Lstm l("l", 7, 32, seq, rng);
    Parameter x("x", random_tensor(Shape{2, 24, 7}, rng));
    std::vector<Parameter*> ps;
    l.collect(ps);
    ps.push_back(&x);
    expect_gradients(ps, [&](Tape& t) { return project(t, l.forward(t, t.param(x)), 25); });
  }
}

TEST(GradCheck, MultiHeadAttention) {
  Rng rng(26);
  layers::MultiHeadAttention mha("a", 8, 7, 2, 4, rng);
  Parameter q("q", random_tensor(Shape{2, 24, 8}, rng)), kv("kv", random_tensor(Shape{2, 24, 7}, rng));
  std::vector<Parameter*> ps;
  mha.collect(ps);
  ps.push_back(&q);
  ps.push_back(&kv);
  expect_gradients(ps, [&](Tape& t) { return project(t, mha.forward(t, t.param(q), t.param(kv)), 27); });
}

TEST(GradCheck, LayerNorm) {
  Rng rng(28);
  layers::LayerNorm ln("ln", 8);
  Parameter x("x", random_tensor(Shape{2, 24, 8}, rng));
  std::vector<Parameter*> ps;
  ln.collect(ps);
  ps.push_back(&x);
  expect_gradients(ps, [&](Tape& t) { return project(t, ln.forward(t, t.param(x)), 29); });
}

TEST(GradCheck, BatchNormTrainAndInfer) {
  for (Mode mode : {Mode::train, Mode::infer}) {
    Rng rng(30);
    layers::BatchNorm bn("bn", 32);
    Parameter x("x", random_tensor(Shape{2, 24, 32}, rng));
    std::vector<Parameter*> ps;
    bn.collect(ps);
    ps.push_back(&x);
    expect_gradients(ps, [&](Tape& t) { return project(t, bn.forward(t, t.param(x), mode), 31); });
  }
}

TEST(GradCheck, Conv1dAndPooling) {
  Rng rng(32);
  layers::Conv1d conv("c", 3, 7, 32, rng);
  Parameter x("x", random_tensor(Shape{2, 24, 7}, rng));
  std::vector<Parameter*> ps;
  conv.collect(ps);
  ps.push_back(&x);
  expect_gradients(ps, [&](Tape& t) { return project(t, ops::mean_over_time(t, conv.forward(t, t.param(x))), 33); });
}

TEST(GradCheck, DropoutAndMse) {
  Rng init(34);
  Parameter x("x", random_tensor(Shape{2, 12}, init));
  const Tensor target = random_tensor(Shape{2, 12}, init);
  std::vector<Parameter*> ps{&x};
  expect_gradients(ps, [&](Tape& t) {
    Rng rng(35);  // same mask on every evaluation
    return ops::mse_loss(t, ops::dropout(t, t.param(x), 0.2, Mode::train, rng), target);
  });
}

TEST(Adam, ZeroGradientLeavesParametersButCountsStep) {
  std::vector<double> p{1.0, -2.0};
  AdamState s;
  adam_update(p, std::vector<double>{0.0, 0.0}, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepIsLearningRate) {
  std::vector<double> p{0.0};
  AdamState s;
  adam_update(p, std::vector<double>{1.0}, s);
  EXPECT_NEAR(p[0], -1e-3 / (1.0 + 1e-8), 1e-18);
}

TEST(Adam, ConstantGradientStepConvergesToLearningRate) {
  std::vector<double> p{0.0};
  AdamState s;
  double prev = 0.0, delta = 0.0;
  for (int i = 0; i < 2000; ++i) {
    adam_update(p, std::vector<double>{0.37}, s);
    delta = prev - p[0];
    prev = p[0];
  }
  EXPECT_NEAR(delta, 1e-3, 1e-6);
}

TEST(Adam, NonFiniteGradientAbortsWithoutChange) {
  std::vector<double> p{1.0, 2.0};
  AdamState s;
  EXPECT_THROW(adam_update(p, std::vector<double>{0.5, std::nan("")}, s), NumericError);
  EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
  EXPECT_EQ(s.step, 0u);
}

TEST(Adam, TrajectoryIsDeterministic) {
  auto run = [] {
    std::vector<double> p{0.3, -0.1, 2.0};
    AdamState s;
    Rng rng(40);
    for (int i = 0; i < 50; ++i) adam_update(p, std::vector<double>{rng.normal(), rng.normal(), rng.normal()}, s);
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(7, "a"), derive_seed(7, "a"));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(7, "b"));
  EXPECT_NE(derive_seed(7, "a"), derive_seed(8, "a"));
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}
