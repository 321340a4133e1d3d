#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "spikehpo/objective.hpp"

using namespace spikehpo;
using namespace spikehpo::objective;

namespace {

DatasetShape tiny_shape() {
  DatasetShape s;
  s.n_classes = 3;
  s.n_in = 6;
  s.n_steps = 20;
  s.train = 30;
  s.val = 9;
  s.test = 9;
  return s;
}

struct Series {
  double loss0, loss_factor, acc0, acc_factor;
};

/// Feeds a geometric validation series and returns (stop epoch, reason).
std::pair<int, StopReason> run_monitor(const Series& s, int max_epochs = 100) {
  EarlyStopMonitor m;
  double loss = s.loss0, acc = s.acc0;
  for (int e = 1; e <= max_epochs; ++e) {
    m.update(loss, acc);
    if (m.should_stop()) return {e, m.reason()};
    loss *= s.loss_factor;
    acc *= s.acc_factor;
  }
  return {0, StopReason::none};
}

}  // namespace

TEST(Dataset, DeterministicForSeed) {
  const auto a = generate_dataset(tiny_shape(), 42, 3);
  const auto b = generate_dataset(tiny_shape(), 42, 3);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  const auto c = generate_dataset(tiny_shape(), 43, 3);
  EXPECT_NE(a.samples[0], c.samples[0]);
}

TEST(Dataset, SplitBookkeeping) {
  const DatasetShape shape;  // 5 classes, 500/100/100
  for (int split = 0; split < 10; ++split) {
    const auto d = generate_dataset(shape, 42, split);
    EXPECT_EQ(d.train.size(), 500u);
    EXPECT_EQ(d.val.size(), 100u);
    EXPECT_EQ(d.test.size(), 100u);
    std::set<std::size_t> all(d.train.begin(), d.train.end());
    all.insert(d.val.begin(), d.val.end());
    all.insert(d.test.begin(), d.test.end());
    EXPECT_EQ(all.size(), 700u);
    for (auto i : d.test) EXPECT_LT(i, 100u);
    EXPECT_EQ(d.samples[0].rows(), 100);
    EXPECT_EQ(d.samples[0].cols(), 20);
  }
  // Same samples and test set for every split; validation moves.
  const auto d0 = generate_dataset(shape, 42, 0);
  const auto d5 = generate_dataset(shape, 42, 5);
  EXPECT_EQ(d0.samples[10], d5.samples[10]);
  EXPECT_EQ(std::set<std::size_t>(d0.test.begin(), d0.test.end()),
            std::set<std::size_t>(d5.test.begin(), d5.test.end()));
  EXPECT_NE(std::set<std::size_t>(d0.val.begin(), d0.val.end()),
            std::set<std::size_t>(d5.val.begin(), d5.val.end()));
}

TEST(Dataset, TemplateRatesAndBinarySpikes) {
  const auto d = generate_dataset(tiny_shape(), 1, 0);
  for (const auto& tpl : d.templates)
    for (double r : tpl) {
      EXPECT_GE(r, 0.02);
      EXPECT_LT(r, 0.25);
    }
  for (const auto& x : d.samples) EXPECT_TRUE(((x.array() == 0.0) || (x.array() == 1.0)).all());
}

TEST(Dataset, Errors) {
  auto s = tiny_shape();
  s.n_classes = 1;
  EXPECT_THROW(generate_dataset(s, 1, 0), ConfigError);
  s = tiny_shape();
  s.val = 2;
  EXPECT_THROW(generate_dataset(s, 1, 0), ConfigError);
  EXPECT_THROW(generate_dataset(tiny_shape(), 1, 10), ConfigError);
  EXPECT_THROW(generate_dataset(tiny_shape(), 1, -1), ConfigError);
}

TEST(Targets, OneHotTiled) {
  const auto t = encode_targets({2, 0}, 3, 4);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].rows(), 4);
  EXPECT_EQ(t[0].col(2).sum(), 4.0);
  EXPECT_EQ(t[0].sum(), 4.0);
  EXPECT_EQ(t[1].col(0).sum(), 4.0);
  EXPECT_THROW(encode_targets({3}, 3, 4), ConfigError);
}

TEST(Infer, DominantClassInWindow) {
  Trace y = Trace::Zero(10, 5);
  y.block(5, 3, 5, 1).setConstant(1.0);
  y.block(0, 1, 5, 1).setConstant(10.0);
  EXPECT_EQ(infer(y, 5), 3);
  EXPECT_EQ(infer(y, 10), 1);
  EXPECT_EQ(infer(Trace::Zero(4, 3), 2), 0);
  EXPECT_THROW(infer(y, 11), ConfigError);
  EXPECT_THROW(infer(y, 0), ConfigError);
}

TEST(Loss, UniformOutputsGiveLogK) {
  const Trace y = Trace::Zero(6, 4);
  const auto t = encode_targets({1}, 4, 6);
  EXPECT_NEAR(sample_loss(y, t[0], 3), 1.386294, 1e-6);
  EXPECT_NEAR(loss({y, y}, {t[0], t[0]}, 6), std::log(4.0), 1e-15);
}

TEST(Loss, ConfidentCorrectIsNearZero) {
  Trace y = Trace::Zero(2, 3);
  y.col(2).setConstant(50.0);
  EXPECT_LT(sample_loss(y, encode_targets({2}, 3, 2)[0], 2), 1e-20);
  EXPECT_NEAR(sample_loss(y, encode_targets({0}, 3, 2)[0], 2), 50.0, 1e-9);
}

TEST(EarlyStop, SmallLossChangeStopsAtEleven) {
  const auto [epoch, reason] = run_monitor({1.0, 0.999, 50.0, 1.01});
  EXPECT_EQ(epoch, 11);
  EXPECT_EQ(reason, StopReason::small_val_loss_change);
  EXPECT_EQ(describe(reason, epoch, 1000),
            "Training stopped after 11/1000 epochs: stop condition for small validation loss changes met.");
}

TEST(EarlyStop, LossIncreaseStopsAtEleven) {
  const auto [epoch, reason] = run_monitor({1.0, 1.01, 50.0, 1.01});
  EXPECT_EQ(epoch, 11);
  EXPECT_EQ(reason, StopReason::val_loss_increase);
}

TEST(EarlyStop, SmallAccChangeStopsAtSix) {
  const auto [epoch, reason] = run_monitor({1.0, 0.98, 50.0, 1.0});
  EXPECT_EQ(epoch, 6);
  EXPECT_EQ(reason, StopReason::small_val_acc_change);
}

TEST(EarlyStop, AccDecreaseStopsAtSix) {
  const auto [epoch, reason] = run_monitor({1.0, 0.98, 50.0, 0.97});
  EXPECT_EQ(epoch, 6);
  EXPECT_EQ(reason, StopReason::val_acc_decrease);
}

TEST(EarlyStop, ConstantSeriesStopsAtSixOnAccuracy) {
  const auto [epoch, reason] = run_monitor({1.0, 1.0, 50.0, 1.0});
  EXPECT_EQ(epoch, 6);
  EXPECT_EQ(reason, StopReason::small_val_acc_change);
}

TEST(EarlyStop, LossRisingOnePercentWithFlatAccuracyStopsAtSix) {
  const auto [epoch, reason] = run_monitor({1.0, 1.01, 50.0, 1.0});
  EXPECT_EQ(epoch, 6);
  EXPECT_EQ(reason, StopReason::small_val_acc_change);
}

TEST(EarlyStop, StreakResets) {
  EarlyStopMonitor m;
  double acc = 50.0;
  for (int e = 1; e <= 30; ++e) {
    // Flat accuracy for four epochs, then a jump, repeated.
    if (e % 5 == 0) acc *= 1.05;
    m.update(1.0 / e, acc);
    EXPECT_FALSE(m.should_stop()) << "epoch " << e;
  }
}

TEST(EarlyStop, ZeroPreviousValueSkipsCounters) {
  EarlyStopMonitor m;
  for (int e = 1; e <= 20; ++e) m.update(1.0 / e, 0.0);
  EXPECT_FALSE(m.should_stop());
  EXPECT_EQ(m.small_acc_change.count, 0);
}

TEST(Settings, FromMergedParams) {
  const ParamAssignment p{{"epochs", std::int64_t{3}},   {"n_rec", std::int64_t{32}},
                          {"threshold", 0.45},           {"reset_mechanism", std::string("zero")},
                          {"delay_targets", std::int64_t{10}}, {"unknown", 1.0}};
  const auto s = settings_from_params(p);
  EXPECT_EQ(s.epochs, 3);
  EXPECT_EQ(s.n_rec, 32);
  EXPECT_DOUBLE_EQ(s.threshold, 0.45);
  EXPECT_EQ(s.reset, snn::ResetMechanism::zero);
  const auto cfg = model_config(s, DatasetShape{});
  EXPECT_EQ(cfg.t_crop, 10);
  EXPECT_EQ(model_config(settings_from_params({}), DatasetShape{}).t_crop, 100);
  EXPECT_THROW(settings_from_params({{"epochs", std::int64_t{0}}}), ConfigError);
  EXPECT_THROW(settings_from_params({{"reset_mechanism", std::int64_t{1}}}), ConfigError);
}

TEST(Epoch, EvalModesLeaveWeightsAlone) {
  const auto data = generate_dataset(tiny_shape(), 5, 0);
  TrainSettings s;
  s.n_rec = 8;
  Rng rng(1);
  auto model = snn::make_model(model_config(s, data.shape), rng);
  const auto before = model;
  snn::AdamConfig adam;
  snn::AdamState st;
  const auto va = do_epoch(model, data, data.val, EpochMode::val, 4, adam, st);
  EXPECT_TRUE(model == before);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(va.batches, 3u);  // 9 samples, batches of 4
  EXPECT_EQ(va.predictions.size(), 9u);
  EXPECT_GE(va.accuracy, 0.0);
  EXPECT_LE(va.accuracy, 100.0);

  const auto tr = do_epoch(model, data, data.train, EpochMode::train, 10, adam, st);
  EXPECT_EQ(tr.batches, 3u);
  EXPECT_EQ(st.step, 3);
  EXPECT_FALSE(model == before);
}

TEST(Trial, OneEpochReportsOnceAndTestsBestModel) {
  const auto data = generate_dataset(tiny_shape(), 5, 2);
  TrainSettings s;
  s.epochs = 1;
  s.n_rec = 8;
  std::vector<OrderedMap<double>> inter, fin;
  Reporter r{[&](const OrderedMap<double>& m) { inter.push_back(m); },
             [&](const OrderedMap<double>& m) { fin.push_back(m); }};
  const auto out = train_trial(s, data, r, 77);
  ASSERT_EQ(inter.size(), 1u);
  ASSERT_EQ(fin.size(), 1u);
  EXPECT_EQ(out.epochs_run, 1);
  EXPECT_EQ(out.stop_reason, StopReason::none);
  std::vector<std::string> keys;
  for (const auto& [k, _] : inter[0]) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"default", "training acc.", "val. loss", "train. loss"}));
  keys.clear();
  for (const auto& [k, _] : fin[0]) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"default", "best training", "test"}));
  EXPECT_EQ(fin[0].at("default"), round_to(out.series.val_acc[0], 4));
  EXPECT_EQ(out.test_predictions.size(), 9u);
  EXPECT_EQ(fin[0].at("test"), round_to(out.test_acc, 4));
}

TEST(Trial, SameSeedSameOutcome) {
  const auto data = generate_dataset(tiny_shape(), 5, 2);
  TrainSettings s;
  s.epochs = 3;
  s.n_rec = 8;
  const auto a = train_trial(s, data, {}, 9);
  const auto b = train_trial(s, data, {}, 9);
  EXPECT_EQ(a.series.val_loss, b.series.val_loss);
  EXPECT_TRUE(a.best_val_model == b.best_val_model);
}

TEST(Trial, LearnsTheSyntheticTask) {
  // Small network, a few epochs: well above the 20% chance level.
  DatasetShape shape;
  shape.train = 200;
  shape.val = 50;
  shape.test = 50;
  const auto data = generate_dataset(shape, 42, 0);
  TrainSettings s;
  s.epochs = 6;
  s.n_rec = 32;
  s.lr = 0.005;
  s.threshold = 0.5;
  s.tau_out = 20e-3;
  s.delay_targets = 20;
  const auto out = train_trial(s, data, {}, 1);
  EXPECT_GT(out.test_acc, 60.0);
}
