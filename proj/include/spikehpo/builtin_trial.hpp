#pragma once

// The built-in trial program: synthetic spiking task + SRNN trained with
// e-prop, driven entirely through the wire protocol.

#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "spikehpo/objective.hpp"
#include "spikehpo/protocol.hpp"
#include "spikehpo/report.hpp"
#include "spikehpo/storage.hpp"

namespace spikehpo {

struct BuiltinTrialOptions {
  /// Scalar defaults ("line arguments"); sampled parameters override them.
  ParamAssignment defaults;
  /// Vector-valued settings that are never sampled.
  std::array<double, 3> lr_layer_norm{0.05, 0.05, 1.0};
  std::array<double, 3> w_init_gain{0.5, 0.1, 0.5};
  objective::DatasetShape dataset;
  std::uint64_t dataset_seed = 42;
  bool save_model = true;
};

inline ParamAssignment default_trial_params() {
  ParamAssignment d;
  d["epochs"] = std::int64_t{1000};
  d["lr"] = 1e-3;
  d["batch_size"] = std::int64_t{10};
  d["val_batch_size"] = std::int64_t{10};
  d["test_batch_size"] = std::int64_t{10};
  d["n_rec"] = std::int64_t{64};
  d["threshold"] = 0.9;
  d["tau_mem"] = 250e-3;
  d["tau_out"] = 5e-3;
  d["bias_out"] = 0.0;
  d["gamma"] = 0.3;
  d["reset_mechanism"] = std::string("subtract");
  d["delay_targets"] = std::int64_t{0};
  return d;
}

namespace detail {
inline std::string timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  ::localtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%d_%H%M%S");
  return s.str();
}

inline Json series_json(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}
}  // namespace detail

struct BuiltinTrialResult {
  objective::TrialOutcome outcome;
  bool model_retained = false;
};

inline BuiltinTrialResult run_builtin_trial(TrialClient& client, const BuiltinTrialOptions& opts) {
  const auto& ctx = client.context();
  if (ctx.working_dir.empty() || ctx.experiment_name.empty())
    throw ProtocolError("HPO_WORKING_DIR and HPO_EXPERIMENT_NAME are required by the built-in trial");
  const ExperimentLayout layout{ctx.working_dir, ctx.experiment_name, ctx.experiment_id};
  fs::create_directories(layout.logs_dir());
  fs::create_directories(layout.models_dir());
  fs::create_directories(layout.reports_dir());
  fs::create_directories(layout.results_dir());

  std::ofstream log(layout.logs_dir() / (ctx.trial_id + ".log"), std::ios::app);
  const auto stamp = detail::timestamp();
  log << "Trial " << ctx.sequence_id + 1 << " (# " << ctx.sequence_id << ", ID " << ctx.trial_id << ") started on "
      << stamp << '\n';

  Rng rng = Rng::derive(ctx.experiment_seed, ctx.sequence_id);
  const int random_split = static_cast<int>(rng.below(10));
  log << "Training-validation split used: " << random_split << '\n';
  const auto data = objective::generate_dataset(opts.dataset, opts.dataset_seed, random_split);
  log << "Seed set to " << opts.dataset_seed << '\n';

  const auto merged = merge_params(opts.defaults, client.get_next_parameter());
  log << "Parameters selected for trial " << ctx.sequence_id + 1 << ": " << to_json(merged).dump() << '\n';
  objective::TrainSettings base;
  base.lr_layer_norm = opts.lr_layer_norm;
  base.w_init_gain = opts.w_init_gain;
  const auto settings = objective::settings_from_params(merged, base);

  objective::Reporter reporter{
      [&](const OrderedMap<double>& m) { client.report_intermediate_result(m); },
      [&](const OrderedMap<double>& m) { client.report_final_result(m); },
  };
  BuiltinTrialResult res;
  res.outcome = objective::train_trial(settings, data, reporter, rng.next_u64());
  for (const auto& line : res.outcome.log) log << line << '\n';
  const auto& out = res.outcome;

  append_report(layout.report_file(), out.test_acc, ctx.sequence_id, ctx.trial_id);
  write_json_file(report::predictions_file(layout, ctx.trial_id),
                  Json{{"n_classes", data.shape.n_classes},
                       {"predictions", out.test_predictions},
                       {"labels", out.test_labels}});

  if (opts.save_model) {
    std::vector<std::string> warnings;
    res.model_retained = retain_best_model(
        layout.report_file(), out.test_acc,
        [&] {
          std::ofstream blob(layout.models_dir() / (std::to_string(ctx.sequence_id) + "_" + stamp + "_" + ctx.trial_id),
                             std::ios::binary | std::ios::trunc);
          write_model_blob(blob, out.best_val_model,
                           Json{{"trial_id", ctx.trial_id}, {"sequence_id", ctx.sequence_id},
                                {"best_val_epoch", out.best_val_epoch}, {"parameters", to_json(merged)}});
          const auto dir = layout.results_dir();
          write_json_file(dir / (ctx.trial_id + "_train_acc"), detail::series_json(out.series.train_acc));
          write_json_file(dir / (ctx.trial_id + "_train_loss"), detail::series_json(out.series.train_loss));
          write_json_file(dir / (ctx.trial_id + "_val_acc"), detail::series_json(out.series.val_acc));
          write_json_file(dir / (ctx.trial_id + "_val_loss"), detail::series_json(out.series.val_loss));
          write_json_file(dir / (ctx.trial_id + "_test_acc"), detail::series_json(out.series.test_acc));
          write_json_file(dir / (ctx.trial_id + "_test_loss"), detail::series_json(out.series.test_loss));
        },
        &warnings);
    for (const auto& w : warnings) log << "warning: " << w << '\n';
    if (res.model_retained) log << "Model retained (test accuracy " << format_real(out.test_acc) << ")\n";
  }
  log << "=== Trial completed ===\n";
  return res;
}

}  // namespace spikehpo
