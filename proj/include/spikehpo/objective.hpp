#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "spikehpo/protocol.hpp"
#include "spikehpo/searchspace.hpp"
#include "spikehpo/snn.hpp"

namespace spikehpo::objective {

using snn::Trace;

// ---------------------------------------------------------------------------
// Dataset

struct DatasetShape {
  int n_classes = 5;
  int n_in = 20;
  int n_steps = 100;
  std::size_t train = 500;
  std::size_t val = 100;
  std::size_t test = 100;
};

struct SpikeDataset {
  DatasetShape shape;
  std::vector<Trace> samples;  // each [T x n_in], entries 0 or 1
  std::vector<int> labels;
  std::vector<std::size_t> train, val, test;  // indices into samples
  int random_split = 0;
  std::vector<std::vector<double>> templates;  // per-class firing probability per channel
};

/// Synthetic spiking classification task.
///
/// Each class has a fixed per-channel firing-probability template drawn from
/// [0.02, 0.25]; a sample is an independent Bernoulli realization of its
/// class template at every step. Labels are interleaved (sample i has class
/// i mod K). The first `test` samples are held out as the test set; the
/// remaining pool is viewed as 10 folds and a window of `val` samples starting
/// at fold `random_split` (cyclic) becomes validation; the rest is training.
inline SpikeDataset generate_dataset(const DatasetShape& shape, std::uint64_t seed, int random_split) {
  if (shape.n_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (shape.n_in < 1 || shape.n_steps < 1) throw ConfigError("dataset needs positive n_in and n_steps");
  if (random_split < 0 || random_split >= 10) throw ConfigError("random_split must lie in [0, 10)");
  const auto k = static_cast<std::size_t>(shape.n_classes);
  if (shape.train < k || shape.val < k || shape.test < k)
    throw ConfigError("split sizes too small to cover every class");

  Rng rng(seed);
  SpikeDataset ds;
  ds.shape = shape;
  ds.random_split = random_split;
  ds.templates.assign(k, std::vector<double>(static_cast<std::size_t>(shape.n_in)));
  for (auto& tpl : ds.templates)
    for (auto& r : tpl) r = rng.uniform(0.02, 0.25);

  const std::size_t n = shape.train + shape.val + shape.test;
  ds.samples.reserve(n);
  ds.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % k);
    Trace x(shape.n_steps, shape.n_in);
    for (int t = 0; t < shape.n_steps; ++t)
      for (int ch = 0; ch < shape.n_in; ++ch) x(t, ch) = rng.bernoulli(ds.templates[c][ch]) ? 1.0 : 0.0;
    ds.samples.push_back(std::move(x));
    ds.labels.push_back(c);
  }

  for (std::size_t i = 0; i < shape.test; ++i) ds.test.push_back(i);
  const std::size_t pool = shape.train + shape.val;
  const std::size_t start = static_cast<std::size_t>(random_split) * pool / 10;
  std::vector<bool> in_val(pool, false);
  for (std::size_t i = 0; i < shape.val; ++i) in_val[(start + i) % pool] = true;
  for (std::size_t p = 0; p < pool; ++p) (in_val[p] ? ds.val : ds.train).push_back(shape.test + p);

  // Split contents are fixed by the seed; only their order is shuffled.
  Rng order(seed ^ 0x5deece66dULL);
  for (auto* split : {&ds.train, &ds.val, &ds.test})
    for (std::size_t i = split->size(); i > 1; --i) std::swap((*split)[i - 1], (*split)[order.below(i)]);

  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    std::vector<bool> seen(k, false);
    for (auto idx : *split) seen[static_cast<std::size_t>(ds.labels[idx])] = true;
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw ConfigError("split sizes too small to cover every class");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Targets, inference, loss

/// One-hot targets tiled over T steps: element b is the [T x n_classes]
/// target of batch element b.
inline std::vector<Trace> encode_targets(const std::vector<int>& labels, int n_classes, int n_steps) {
  std::vector<Trace> out;
  out.reserve(labels.size());
  for (int label : labels) {
    if (label < 0 || label >= n_classes) throw ConfigError("label " + std::to_string(label) + " out of range");
    Trace t = Trace::Zero(n_steps, n_classes);
    t.col(label).setOnes();
    out.push_back(std::move(t));
  }
  return out;
}

inline void check_delay(Eigen::Index steps, int delay) {
  if (delay < 1) throw ConfigError("delay must be >= 1");
  if (delay > steps) throw ConfigError("delay (" + std::to_string(delay) + ") exceeds sequence length");
}

/// argmax over classes of the output summed over the last `delay` steps;
/// ties go to the lowest class index.
inline int infer(const Trace& outputs, int delay) {
  check_delay(outputs.rows(), delay);
  const Eigen::RowVectorXd summed = outputs.bottomRows(delay).colwise().sum();
  int best = 0;
  for (int c = 1; c < summed.size(); ++c)
    if (summed(c) > summed(best)) best = c;
  return best;
}

/// Mean cross-entropy of softmax(y[t]) against the target over the last
/// `delay` steps of one sample.
inline double sample_loss(const Trace& outputs, const Trace& targets, int delay) {
  check_delay(outputs.rows(), delay);
  const auto T = outputs.rows();
  double total = 0.0;
  for (Eigen::Index t = T - delay; t < T; ++t) {
    const double mx = outputs.row(t).maxCoeff();
    const double lse = mx + std::log((outputs.row(t).array() - mx).exp().sum());
    total += lse - outputs.row(t).dot(targets.row(t));
  }
  return total / static_cast<double>(delay);
}

/// Mean over (last `delay` steps x batch).
inline double loss(const std::vector<Trace>& outputs, const std::vector<Trace>& targets, int delay) {
  if (outputs.empty() || outputs.size() != targets.size()) throw ConfigError("loss: batch size mismatch");
  double total = 0.0;
  for (std::size_t b = 0; b < outputs.size(); ++b) total += sample_loss(outputs[b], targets[b], delay);
  return total / static_cast<double>(outputs.size());
}

// ---------------------------------------------------------------------------
// Early stopping

enum class StopReason { none, small_val_loss_change, val_loss_increase, small_val_acc_change, val_acc_decrease };

inline std::string describe(StopReason r, int epoch, int epochs) {
  const std::string head = "Training stopped after " + std::to_string(epoch) + "/" + std::to_string(epochs) + " epochs: ";
  switch (r) {
    case StopReason::small_val_loss_change:
      return head + "stop condition for small validation loss changes met.";
    case StopReason::val_loss_increase:
      return head + "stop condition for validation loss increase met.";
    case StopReason::small_val_acc_change:
      return head + "stop condition for small validation accuracy changes met.";
    case StopReason::val_acc_decrease:
      return head + "stop condition for validation accuracy decrease met.";
    case StopReason::none:
      break;
  }
  return "Training ended after " + std::to_string(epoch) + "/" + std::to_string(epochs) + " epochs.";
}

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::small_val_loss_change: return "small_val_loss_change";
    case StopReason::val_loss_increase: return "val_loss_increase";
    case StopReason::small_val_acc_change: return "small_val_acc_change";
    case StopReason::val_acc_decrease: return "val_acc_decrease";
    case StopReason::none: break;
  }
  return "epoch_limit";
}

struct StopCounter {
  double threshold_pct;
  int patience;
  int count = 0;

  void update(bool condition) { count = condition ? count + 1 : 0; }
  bool fired() const { return count >= patience; }
};

/// The four validation-curve counters. Each counts the current streak of
/// epochs whose relative change (vs. the previous epoch, in percent) meets
/// its condition; training stops when any streak reaches its patience.
class EarlyStopMonitor {
public:
  StopCounter small_loss_change{0.5, 10};
  StopCounter loss_increase{0.5, 10};
  StopCounter small_acc_change{0.1, 5};
  StopCounter acc_decrease{2.0, 5};

  /// Feed one epoch's validation metrics (epochs in order, starting at 1).
  void update(double val_loss, double val_acc) {
    ++epoch_;
    if (epoch_ >= 2) {
      // A zero previous value leaves that quantity's counters untouched.
      if (prev_loss_ != 0.0) {
        const double rel = (val_loss - prev_loss_) / prev_loss_ * 100.0;
        small_loss_change.update(std::abs(rel) < small_loss_change.threshold_pct);
        loss_increase.update(rel > loss_increase.threshold_pct);
      }
      if (prev_acc_ != 0.0) {
        const double rel = (val_acc - prev_acc_) / prev_acc_ * 100.0;
        small_acc_change.update(std::abs(rel) < small_acc_change.threshold_pct);
        acc_decrease.update(-rel > acc_decrease.threshold_pct);
      }
    }
    prev_loss_ = val_loss;
    prev_acc_ = val_acc;
  }

  bool should_stop() const { return reason() != StopReason::none; }

  /// First fired counter, in the fixed reporting order.
  StopReason reason() const {
    if (small_loss_change.fired()) return StopReason::small_val_loss_change;
    if (loss_increase.fired()) return StopReason::val_loss_increase;
    if (small_acc_change.fired()) return StopReason::small_val_acc_change;
    if (acc_decrease.fired()) return StopReason::val_acc_decrease;
    return StopReason::none;
  }

  int epochs_seen() const { return epoch_; }

private:
  int epoch_ = 0;
  double prev_loss_ = 0.0;
  double prev_acc_ = 0.0;
};

// ---------------------------------------------------------------------------
// Training

struct TrainSettings {
  int epochs = 1000;
  double lr = 1e-3;
  std::array<double, 3> lr_layer_norm{0.05, 0.05, 1.0};
  std::size_t batch_size = 10;
  std::size_t val_batch_size = 10;
  std::size_t test_batch_size = 10;
  bool shuffle = true;
  int n_rec = 64;
  double threshold = 0.9;
  double tau_mem = 250e-3;
  double tau_out = 5e-3;
  double bias_out = 0.0;
  double gamma = 0.3;
  std::array<double, 3> w_init_gain{0.5, 0.1, 0.5};
  snn::ResetMechanism reset = snn::ResetMechanism::subtract;
  int delay_targets = 0;  // 0: whole sequence
  double dt = 1e-3;
};

/// Reads the scalar training settings present in a merged parameter map;
/// keys it does not know are ignored.
inline TrainSettings settings_from_params(const ParamAssignment& p, TrainSettings s = {}) {
  auto num = [&](const char* key, auto& field) {
    const auto it = p.find(key);
    if (it == p.end()) return;
    using F = std::decay_t<decltype(field)>;
    const double v = as_double(it->second);
    if constexpr (std::is_integral_v<F>)
      field = static_cast<F>(std::llround(v));
    else
      field = v;
  };
  num("epochs", s.epochs);
  num("lr", s.lr);
  num("batch_size", s.batch_size);
  num("val_batch_size", s.val_batch_size);
  num("test_batch_size", s.test_batch_size);
  num("n_rec", s.n_rec);
  num("threshold", s.threshold);
  num("tau_mem", s.tau_mem);
  num("tau_out", s.tau_out);
  num("bias_out", s.bias_out);
  num("gamma", s.gamma);
  num("delay_targets", s.delay_targets);
  num("dt", s.dt);
  if (const auto it = p.find("reset_mechanism"); it != p.end()) {
    if (!std::holds_alternative<std::string>(it->second)) throw ConfigError("reset_mechanism must be a string");
    s.reset = snn::parse_reset(std::get<std::string>(it->second));
  }
  if (s.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (s.batch_size < 1 || s.val_batch_size < 1 || s.test_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  return s;
}

inline snn::SrnnConfig model_config(const TrainSettings& s, const DatasetShape& shape) {
  snn::SrnnConfig c;
  c.n_in = shape.n_in;
  c.n_rec = s.n_rec;
  c.n_out = shape.n_classes;
  c.threshold = s.threshold;
  c.tau_mem = s.tau_mem;
  c.tau_out = s.tau_out;
  c.bias_out = s.bias_out;
  c.gamma = s.gamma;
  c.reset = s.reset;
  c.t_crop = s.delay_targets > 0 ? s.delay_targets : shape.n_steps;
  c.dt = s.dt;
  c.w_init_gain = s.w_init_gain;
  return c;
}

enum class EpochMode { train, val, test };

struct EpochResult {
  double accuracy = 0.0;  // percent
  double loss = 0.0;      // sum of per-batch mean losses
  std::size_t batches = 0;
  std::vector<int> predictions;  // in visiting order
  std::vector<int> labels;
};

/// One pass over `indices`. Train mode applies one e-prop + Adam update per
/// batch, computed from the outputs of the weights before the update.
inline EpochResult do_epoch(snn::SrnnModel& model, const SpikeDataset& data, std::vector<std::size_t> indices,
                            EpochMode mode, std::size_t batch_size, const snn::AdamConfig& adam,
                            snn::AdamState& adam_state, Rng* shuffle_rng = nullptr) {
  if (indices.empty()) throw ConfigError("cannot run an epoch over an empty split");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (shuffle_rng != nullptr)
    for (std::size_t i = indices.size(); i > 1; --i) std::swap(indices[i - 1], indices[shuffle_rng->below(i)]);

  const int delay = model.t_crop;
  EpochResult res;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    snn::Gradients grad = snn::Gradients::zeros_like(model);
    double batch_loss = 0.0;
    for (std::size_t b = start; b < end; ++b) {
      const auto idx = indices[b];
      const Trace& x = data.samples[idx];
      const int label = data.labels[idx];
      Trace target = Trace::Zero(x.rows(), model.n_out());
      target.col(label).setOnes();

      const auto fwd = snn::forward(model, x);
      batch_loss += sample_loss(fwd.y, target, delay);
      const int pred = infer(fwd.y, delay);
      correct += pred == label ? 1 : 0;
      res.predictions.push_back(pred);
      res.labels.push_back(label);
      if (mode == EpochMode::train) grad += snn::eprop_grads(model, x, fwd, target);
    }
    const auto n = static_cast<double>(end - start);
    res.loss += batch_loss / n;
    ++res.batches;
    if (mode == EpochMode::train) {
      grad *= 1.0 / n;
      snn::adam_step(model, grad, adam, adam_state);
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size()) * 100.0;
  return res;
}

inline double round_to(double x, int decimals) {
  const double f = std::pow(10.0, decimals);
  return std::round(x * f) / f;
}

struct TrialSeries {
  std::vector<double> train_loss, train_acc, val_loss, val_acc, test_loss, test_acc;
};

struct TrialOutcome {
  TrialSeries series;
  double test_acc = 0.0;
  double best_val_acc = 0.0;
  int best_val_epoch = 0;
  double best_train_acc = 0.0;
  snn::SrnnModel best_val_model;
  StopReason stop_reason = StopReason::none;
  int epochs_run = 0;
  std::vector<int> test_predictions;
  std::vector<int> test_labels;
  std::vector<std::string> log;
};

struct Reporter {
  std::function<void(const OrderedMap<double>&)> intermediate;
  std::function<void(const OrderedMap<double>&)> final;
};

/// Epoch loop with validation checkpointing, the four early-stop counters,
/// and a test pass with the best-validation weights.
inline TrialOutcome train_trial(const TrainSettings& s, const SpikeDataset& data, const Reporter& reporter,
                                std::uint64_t seed) {
  Rng rng(seed);
  const auto cfg = model_config(s, data.shape);
  if (cfg.t_crop > data.shape.n_steps) throw ConfigError("delay_targets exceeds the number of time steps");
  snn::SrnnModel model = snn::make_model(cfg, rng);
  snn::AdamConfig adam;
  adam.lr = s.lr;
  adam.layer_factor = s.lr_layer_norm;
  snn::AdamState adam_state;
  snn::AdamState no_update;

  TrialOutcome out;
  EarlyStopMonitor monitor;
  int epoch = 0;
  while (!monitor.should_stop() && epoch < s.epochs) {
    ++epoch;
    auto tr = do_epoch(model, data, data.train, EpochMode::train, s.batch_size, adam, adam_state,
                       s.shuffle ? &rng : nullptr);
    out.series.train_acc.push_back(tr.accuracy);
    out.series.train_loss.push_back(tr.loss);

    auto va = do_epoch(model, data, data.val, EpochMode::val, s.val_batch_size, adam, no_update);
    out.series.val_acc.push_back(va.accuracy);
    out.series.val_loss.push_back(va.loss);
    if (epoch == 1 || va.accuracy >= out.best_val_acc) {
      out.best_val_acc = va.accuracy;
      out.best_val_epoch = epoch;
      out.best_val_model = model;
    }
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch));
    if (reporter.intermediate) {
      OrderedMap<double> m;
      m["default"] = round_to(va.accuracy, 4);
      m["training acc."] = round_to(tr.accuracy, 4);
      m["val. loss"] = round_to(va.loss, 5);
      m["train. loss"] = round_to(tr.loss, 5);
      reporter.intermediate(m);
    }
    out.log.push_back("epoch " + std::to_string(epoch) + ": train acc " + std::to_string(tr.accuracy) + ", val acc " +
                      std::to_string(va.accuracy) + ", val loss " + std::to_string(va.loss));
    monitor.update(va.loss, va.accuracy);
  }
  out.epochs_run = epoch;
  out.stop_reason = monitor.reason();
  out.log.push_back(describe(out.stop_reason, epoch, s.epochs));

  snn::SrnnModel test_model = out.best_val_model;
  auto te = do_epoch(test_model, data, data.test, EpochMode::test, s.test_batch_size, adam, no_update);
  out.series.test_acc.push_back(te.accuracy);
  out.series.test_loss.push_back(te.loss);
  out.test_acc = te.accuracy;
  out.test_predictions = std::move(te.predictions);
  out.test_labels = std::move(te.labels);
  out.best_train_acc = *std::max_element(out.series.train_acc.begin(), out.series.train_acc.end());

  if (reporter.final) {
    OrderedMap<double> m;
    m["default"] = round_to(out.best_val_acc, 4);
    m["best training"] = round_to(out.best_train_acc, 4);
    m["test"] = round_to(out.test_acc, 4);
    reporter.final(m);
  }
  return out;
}

}  // namespace spikehpo::objective
