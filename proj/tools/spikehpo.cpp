// spikehpo command-line front end.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "spikehpo/builtin_trial.hpp"
#include "spikehpo/engine.hpp"
#include "spikehpo/report.hpp"

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

int cmd_run(const std::string& config_path, const std::string& resume, bool quiet) {
  auto cfg = spikehpo::load_config(config_path);
  spikehpo::EngineOptions opts;
  if (!resume.empty()) opts.resume_dir = resume;
  opts.should_stop = [] { return g_interrupted != 0; };
  if (!quiet) opts.log = &std::cout;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  spikehpo::Engine engine(std::move(cfg), std::move(opts));
  engine.run();
  std::cout << "experiment directory: " << engine.layout().experiment_dir().string() << '\n';
  std::cout << spikehpo::report::status(engine.layout().experiment_dir());
  return 0;
}

int cmd_trial(const spikehpo::BuiltinTrialOptions& opts) {
  spikehpo::TrialClient client(spikehpo::context_from_env());
  const auto res = spikehpo::run_builtin_trial(client, opts);
  std::cout << "=== TRIAL #" << client.context().sequence_id << " DONE === test accuracy "
            << spikehpo::format_real(res.outcome.test_acc) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spikehpo: hyperparameter optimization engine with a built-in spiking-network objective"};
  app.require_subcommand(1);

  std::string config_path, resume_dir;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "Run an experiment from a JSON config file");
  run->add_option("config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_option("--resume", resume_dir, "Continue an existing experiment directory")->check(CLI::ExistingDirectory);
  run->add_flag("-q,--quiet", quiet, "Only print the final summary");

  std::string exp_dir;
  auto* status = app.add_subcommand("status", "Summarize an experiment directory");
  status->add_option("dir", exp_dir, "Experiment directory")->required();

  std::string out_file;
  auto* parcoords = app.add_subcommand("export-parcoords", "Export succeeded trials as parallel-coordinates CSV");
  parcoords->add_option("dir", exp_dir, "Experiment directory")->required();
  parcoords->add_option("-o,--output", out_file, "Output file (default: stdout)");

  std::string trial_id;
  auto* confusion = app.add_subcommand("confusion", "Confusion matrix of a trial's test predictions");
  confusion->add_option("dir", exp_dir, "Experiment directory")->required();
  confusion->add_option("trial_id", trial_id, "Trial id")->required();

  auto* stop = app.add_subcommand("stop", "Ask a running experiment to stop");
  stop->add_option("dir", exp_dir, "Experiment directory")->required()->check(CLI::ExistingDirectory);

  auto* recover = app.add_subcommand("recover", "Mark trials interrupted by an engine crash as Failed");
  recover->add_option("dir", exp_dir, "Experiment directory")->required()->check(CLI::ExistingDirectory);

  // Trial defaults, overridden by the tuner's parameters.
  spikehpo::BuiltinTrialOptions topts;
  auto d = spikehpo::default_trial_params();
  std::int64_t epochs = 1000, batch = 10, val_batch = 10, test_batch = 10, n_rec = 64, delay = 0;
  double lr = 1e-3, thr = 0.9, tau_mem = 250e-3, tau_out = 5e-3, bias_out = 0.0, gamma = 0.3;
  std::string reset = "subtract";
  std::vector<double> lr_layer{0.05, 0.05, 1.0}, gains{0.5, 0.1, 0.5};
  bool no_save = false;
  auto* trial = app.add_subcommand("trial-builtin", "Run the built-in SRNN trial (invoked by the engine)");
  trial->add_option("--epochs", epochs)->capture_default_str();
  trial->add_option("--lr", lr)->capture_default_str();
  trial->add_option("--lr-layer-norm", lr_layer)->expected(3)->capture_default_str();
  trial->add_option("--batch-size", batch)->capture_default_str();
  trial->add_option("--val-batch-size", val_batch)->capture_default_str();
  trial->add_option("--test-batch-size", test_batch)->capture_default_str();
  trial->add_option("--n-rec", n_rec)->capture_default_str();
  trial->add_option("--threshold", thr)->capture_default_str();
  trial->add_option("--tau-mem", tau_mem)->capture_default_str();
  trial->add_option("--tau-out", tau_out)->capture_default_str();
  trial->add_option("--bias-out", bias_out)->capture_default_str();
  trial->add_option("--gamma", gamma)->capture_default_str();
  trial->add_option("--w-init-gain", gains)->expected(3)->capture_default_str();
  trial->add_option("--reset-mechanism", reset)->check(CLI::IsMember({"subtract", "zero"}))->capture_default_str();
  trial->add_option("--delay-targets", delay, "Trailing steps for loss/inference (0 = all)")->capture_default_str();
  trial->add_option("--n-classes", topts.dataset.n_classes)->capture_default_str();
  trial->add_option("--n-inputs", topts.dataset.n_in)->capture_default_str();
  trial->add_option("--n-steps", topts.dataset.n_steps)->capture_default_str();
  trial->add_option("--train-len", topts.dataset.train)->capture_default_str();
  trial->add_option("--val-len", topts.dataset.val)->capture_default_str();
  trial->add_option("--test-len", topts.dataset.test)->capture_default_str();
  trial->add_option("--dataset-seed", topts.dataset_seed)->capture_default_str();
  trial->add_flag("--no-save-model", no_save);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, resume_dir, quiet);
    if (*status) {
      std::cout << spikehpo::report::status(exp_dir);
      return 0;
    }
    if (*parcoords) {
      const auto csv = spikehpo::report::export_parallel_coordinates(spikehpo::report::load_journal(exp_dir));
      if (out_file.empty()) {
        std::cout << csv;
      } else {
        std::ofstream out(out_file, std::ios::trunc);
        out << csv;
        if (!out) throw spikehpo::Error("cannot write " + out_file);
      }
      return 0;
    }
    if (*confusion) {
      const auto cm = spikehpo::report::trial_confusion(exp_dir, trial_id);
      std::cout << spikehpo::report::to_csv(cm);
      std::cout << "accuracy," << spikehpo::format_real(cm.accuracy()) << '\n';
      return 0;
    }
    if (*stop) {
      std::ofstream(std::filesystem::path(exp_dir) / "stop") << "stop\n";
      std::cout << "stop requested for " << exp_dir << '\n';
      return 0;
    }
    if (*recover) {
      const auto st = spikehpo::recover_experiment(exp_dir, &std::cout);
      std::cout << "recovered " << st.records.size() << " trial records\n";
      return 0;
    }
    if (*trial) {
      d["epochs"] = epochs;
      d["lr"] = lr;
      d["batch_size"] = batch;
      d["val_batch_size"] = val_batch;
      d["test_batch_size"] = test_batch;
      d["n_rec"] = n_rec;
      d["threshold"] = thr;
      d["tau_mem"] = tau_mem;
      d["tau_out"] = tau_out;
      d["bias_out"] = bias_out;
      d["gamma"] = gamma;
      d["reset_mechanism"] = reset;
      d["delay_targets"] = delay;
      topts.defaults = d;
      std::copy(lr_layer.begin(), lr_layer.end(), topts.lr_layer_norm.begin());
      std::copy(gains.begin(), gains.end(), topts.w_init_gain.begin());
      topts.save_model = !no_save;
      return cmd_trial(topts);
    }
  } catch (const std::exception& e) {
    std::cerr << "spikehpo: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
