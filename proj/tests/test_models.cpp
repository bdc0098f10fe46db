#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "fedstlf/core/gradcheck.hpp"
#include "fedstlf/models/models.hpp"
#include "fedstlf/models/parameter_set.hpp"
#include "fedstlf/models/training.hpp"

using namespace fedstlf;
using ops::Mode;

namespace {

constexpr ModelKind kKinds[] = {ModelKind::transformer, ModelKind::lstm, ModelKind::cnn};

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Windows whose target is an affine function of the last input hour of
// feature 0, so any of the three models can fit it.
WindowBlock linear_block(std::size_t n, std::size_t horizon, std::size_t f, std::uint64_t seed) {
  Rng rng(seed);
  WindowBlock b;
  b.count = n;
  b.inputs = random_tensor(Shape{n, kLookBack, f}, rng, 0.0, 1.0);
  b.targets = Tensor(Shape{n, horizon});
  for (std::size_t i = 0; i < n; ++i) {
    const double last = b.inputs.at(i, kLookBack - 1, 0);
    for (std::size_t h = 0; h < horizon; ++h) b.targets.at(i, h) = 0.2 + 0.5 * last;
    b.starts.push_back(i);
  }
  return b;
}

ParameterSet zeros_except_head_bias(const ForecastModel& m, double bias) {
  ParameterSet p = m.get_parameters();
  for (auto& e : p.entries) std::fill(e.values.begin(), e.values.end(), e.name == "head.bias" ? bias : 0.0);
  return p;
}

}  // namespace

TEST(Models, OutputShapesForEveryScenario) {
  Rng rng(1);
  for (ModelKind kind : kKinds) {
    for (std::size_t h : {12u, 24u}) {
      for (std::size_t f : {5u, 7u}) {
        auto m = build_model(ModelSpec::paper(kind, h, f, 3));
        const Tensor y = m->predict(random_tensor(Shape{3, 24, f}, rng));
        EXPECT_EQ(y.shape(), (Shape{3, h})) << model_kind_name(kind);
        for (double v : y.values()) EXPECT_TRUE(std::isfinite(v));
      }
    }
  }
}

TEST(Models, RejectsWrongInputShape) {
  auto m = build_model(ModelSpec::paper(ModelKind::lstm, 12, 5, 1));
  Rng rng(2);
  EXPECT_THROW(m->predict(random_tensor(Shape{2, 24, 7}, rng)), DimensionError);
  EXPECT_THROW(m->predict(random_tensor(Shape{2, 12, 5}, rng)), DimensionError);
}

TEST(Models, ZeroWeightsGiveHeadBias) {
  Rng rng(4);
  for (ModelKind kind : kKinds) {
    auto m = build_model(ModelSpec::paper(kind, 12, 5, 9));
    m->set_parameters(zeros_except_head_bias(*m, 0.75));
    const Tensor y = m->predict(random_tensor(Shape{2, 24, 5}, rng));
    for (double v : y.values()) EXPECT_EQ(v, 0.75) << model_kind_name(kind);
  }
}

TEST(Models, ParameterManifestIsAFunctionOfTheSpec) {
  for (ModelKind kind : kKinds) {
    auto a = build_model(ModelSpec::paper(kind, 24, 7, 1));
    auto b = build_model(ModelSpec::paper(kind, 24, 7, 2));
    EXPECT_EQ(a->parameter_count(), b->parameter_count());
    EXPECT_TRUE(a->get_parameters().same_manifest(b->get_parameters()));
    EXPECT_FALSE(a->get_parameters().bitwise_equal(b->get_parameters()));
  }
}

TEST(Models, SameSeedSameInitialWeights) {
  for (ModelKind kind : kKinds) {
    auto a = build_model(ModelSpec::paper(kind, 12, 5, 17));
    auto b = build_model(ModelSpec::paper(kind, 12, 5, 17));
    EXPECT_TRUE(a->get_parameters().bitwise_equal(b->get_parameters()));
  }
}

TEST(Models, GetSetRoundTripAndTransport) {
  Rng rng(5);
  const Tensor x = random_tensor(Shape{4, 24, 5}, rng);
  for (ModelKind kind : kKinds) {
    auto a = build_model(ModelSpec::paper(kind, 12, 5, 1));
    auto b = build_model(ModelSpec::paper(kind, 12, 5, 2));
    const ParameterSet p = a->get_parameters();
    a->set_parameters(p);
    EXPECT_TRUE(a->get_parameters().bitwise_equal(p));
    b->set_parameters(p);
    const Tensor ya = a->predict(x), yb = b->predict(x);
    EXPECT_EQ(ya.storage(), yb.storage()) << model_kind_name(kind);
  }
}

TEST(Models, MismatchedHorizonIsTransportError) {
  auto m12 = build_model(ModelSpec::paper(ModelKind::transformer, 12, 5, 1));
  auto m24 = build_model(ModelSpec::paper(ModelKind::transformer, 24, 5, 1));
  try {
    m12->set_parameters(m24->get_parameters());
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos) << e.what();
  }
  auto lstm = build_model(ModelSpec::paper(ModelKind::lstm, 12, 5, 1));
  EXPECT_THROW(m12->set_parameters(lstm->get_parameters()), TransportError);
}

TEST(ParameterSet, EncodeDecodeRoundTrip) {
  auto m = build_model(ModelSpec::paper(ModelKind::cnn, 24, 7, 3));
  const ParameterSet p = m->get_parameters();
  const auto bytes = encode_parameters(p);
  ASSERT_GE(bytes.size(), 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FCP1");
  EXPECT_TRUE(decode_parameters(bytes).bitwise_equal(p));
}

TEST(ParameterSet, ByteLayoutIsLittleEndian) {
  ParameterSet p;
  p.entries.push_back({"w", Shape{2}, {1.0, -2.0}});
  const auto bytes = encode_parameters(p);
  const std::vector<std::uint8_t> expected = {
      'F', 'C', 'P', '1', 1, 0, 0, 0, 'w', 1, 0, 0, 0, 2, 0, 0, 0,
      0, 0, 0, 0, 0, 0, 0xF0, 0x3F,  // 1.0
      0, 0, 0, 0, 0, 0, 0x00, 0xC0,  // -2.0
  };
  EXPECT_EQ(bytes, expected);
}

TEST(ParameterSet, RejectsCorruptData) {
  std::vector<std::uint8_t> bad = {'F', 'C', 'P', '2'};
  EXPECT_THROW(decode_parameters(bad), TransportError);
  auto m = build_model(ModelSpec::reduced(ModelKind::lstm, 12, 5, 3));
  auto bytes = encode_parameters(m->get_parameters());
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_parameters(bytes), TransportError);
}

TEST(ParameterSet, SaveLoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "fedstlf_test_models.fcp";
  auto m = build_model(ModelSpec::paper(ModelKind::transformer, 12, 5, 8));
  save_parameters(path, m->get_parameters());
  EXPECT_TRUE(load_parameters(path).bitwise_equal(m->get_parameters()));
  std::filesystem::remove(path);
}

TEST(Models, FullModelGradientsReducedAndPaperWidths) {
  for (bool paper : {false, true}) {
    for (ModelKind kind : kKinds) {
      const ModelSpec spec = paper ? ModelSpec::paper(kind, 12, 5, 6) : ModelSpec::reduced(kind, 12, 5, 6);
      auto m = build_model(spec);
      Rng rng(7);
      const Tensor x = random_tensor(Shape{2, 24, 5}, rng);
      const Tensor y = random_tensor(Shape{2, 12}, rng);
      std::vector<Parameter*> ps;
      for (Parameter* p : m->parameters())
        if (p->trainable) ps.push_back(p);
      const GradCheckResult r = finite_difference_check(
          ps,
          [&](Tape& t) {
            Rng dropout(11);
            return ops::mse_loss(t, m->forward(t, t.constant(x), Mode::train, dropout), y);
          },
          1e-5, 64, 3);
      EXPECT_LT(r.max_relative_error, 1e-4)
          << model_kind_name(kind) << (paper ? " paper" : " reduced") << " worst " << ps[r.worst_parameter]->name
          << " backprop " << r.worst_backprop << " numeric " << r.worst_numeric;
    }
  }
}

TEST(Models, CnnOneHourShiftIsSmooth) {
  auto m = build_model(ModelSpec::paper(ModelKind::cnn, 12, 5, 4));
  constexpr std::size_t n = 25;
  Tensor series(Shape{n, 5});
  for (std::size_t t = 0; t < n; ++t) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(t) / 24.0;
    const double row[5] = {0.5 + 0.4 * std::sin(a), std::sin(a), std::cos(a), 0.5, 0.3};
    for (std::size_t j = 0; j < 5; ++j) series.at(t, j) = row[j];
  }
  Tensor x(Shape{2, 24, 5});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 0; t < 24; ++t)
      for (std::size_t j = 0; j < 5; ++j) x.at(s, t, j) = series.at(s + t, j);
  const Tensor y = m->predict(x);
  double scale = 0.0, delta = 0.0;
  for (std::size_t h = 0; h < 12; ++h) {
    ASSERT_TRUE(std::isfinite(y.at(0, h)) && std::isfinite(y.at(1, h)));
    scale = std::max(scale, std::abs(y.at(0, h)));
    delta = std::max(delta, std::abs(y.at(1, h) - y.at(0, h)));
  }
  EXPECT_LT(delta, 0.5 * scale + 0.1);
}

TEST(Training, ZeroEpochsLeavesParametersUnchanged) {
  auto m = build_model(ModelSpec::reduced(ModelKind::transformer, 12, 5, 2));
  const ParameterSet before = m->get_parameters();
  Trainer t(std::move(m), 1);
  TrainOptions opt;
  opt.n_epochs = 0;
  const TrainHistory h = t.train(linear_block(40, 12, 5, 1), linear_block(10, 12, 5, 2), opt);
  EXPECT_TRUE(h.train_loss.empty());
  EXPECT_TRUE(h.val_loss.empty());
  EXPECT_TRUE(t.model().get_parameters().bitwise_equal(before));
}

TEST(Training, LossDecreasesOnLearnableTarget) {
  for (ModelKind kind : kKinds) {
    Trainer t(build_model(ModelSpec::reduced(kind, 12, 5, 3)), 5);
    TrainOptions opt;
    opt.n_epochs = 5;
    opt.early_stopping = false;
    opt.batch_size = 16;
    const TrainHistory h = t.train(linear_block(256, 12, 5, 3), WindowBlock{}, opt);
    ASSERT_EQ(h.train_loss.size(), 5u);
    EXPECT_LT(h.train_loss.back(), h.train_loss.front()) << model_kind_name(kind);
    for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(h.train_loss[e], h.train_loss[e - 1] * 1.05) << model_kind_name(kind);
    EXPECT_EQ(h.epoch_seconds.size(), 5u);
    EXPECT_GE(h.seconds_per_epoch(), 0.0);
  }
}

TEST(Training, EarlyStoppingRestoresBestCheckpoint) {
  const WindowBlock train = linear_block(64, 12, 5, 4), val = linear_block(16, 12, 5, 5);
  const ModelSpec spec = ModelSpec::reduced(ModelKind::lstm, 12, 5, 8);

  Trainer reference(build_model(spec), 21);
  TrainOptions one;
  one.n_epochs = 1;
  one.early_stopping = false;
  reference.train(train, val, one);

  Trainer t(build_model(spec), 21);
  TrainOptions opt;
  opt.n_epochs = 8;
  opt.patience = 3;
  opt.val_loss_hook = [](std::size_t epoch, double) { return 1.0 + static_cast<double>(epoch); };
  const TrainHistory h = t.train(train, val, opt);
  EXPECT_EQ(h.best_epoch, 0u);
  EXPECT_TRUE(h.stopped_early);
  EXPECT_EQ(h.train_loss.size(), 4u);
  EXPECT_TRUE(t.model().get_parameters().bitwise_equal(reference.model().get_parameters()));
}

TEST(Training, SameSeedSameHistory) {
  const WindowBlock train = linear_block(64, 12, 5, 6), val = linear_block(16, 12, 5, 7);
  TrainOptions opt;
  opt.n_epochs = 3;
  Trainer a(build_model(ModelSpec::reduced(ModelKind::cnn, 12, 5, 1)), 2);
  Trainer b(build_model(ModelSpec::reduced(ModelKind::cnn, 12, 5, 1)), 2);
  const TrainHistory ha = a.train(train, val, opt), hb = b.train(train, val, opt);
  EXPECT_EQ(ha.train_loss, hb.train_loss);
  EXPECT_EQ(ha.val_loss, hb.val_loss);
  EXPECT_TRUE(a.model().get_parameters().bitwise_equal(b.model().get_parameters()));
}

TEST(Training, SplitCallsEqualOneCall) {
  const WindowBlock train = linear_block(48, 12, 5, 8);
  TrainOptions two;
  two.n_epochs = 2;
  two.early_stopping = false;
  TrainOptions one = two;
  one.n_epochs = 1;
  Trainer a(build_model(ModelSpec::reduced(ModelKind::transformer, 12, 5, 1)), 3);
  Trainer b(build_model(ModelSpec::reduced(ModelKind::transformer, 12, 5, 1)), 3);
  a.train(train, WindowBlock{}, two);
  b.train(train, WindowBlock{}, one);
  b.train(train, WindowBlock{}, one);
  EXPECT_TRUE(a.model().get_parameters().bitwise_equal(b.model().get_parameters()));
}

TEST(Training, Errors) {
  Trainer t(build_model(ModelSpec::reduced(ModelKind::lstm, 12, 5, 1)), 1);
  TrainOptions opt;
  EXPECT_THROW(t.train(WindowBlock{}, WindowBlock{}, opt), TrainingError);
  EXPECT_THROW(t.train(linear_block(8, 12, 5, 1), WindowBlock{}, opt), TrainingError);  // early stopping, no val
  opt.early_stopping = false;
  EXPECT_THROW(t.train(linear_block(8, 24, 5, 1), WindowBlock{}, opt), DimensionError);
  opt.batch_size = 0;
  EXPECT_THROW(t.train(linear_block(8, 12, 5, 1), WindowBlock{}, opt), ConfigError);
}
