#pragma once

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "spikehpo/assessor.hpp"
#include "spikehpo/journal.hpp"
#include "spikehpo/process.hpp"
#include "spikehpo/storage.hpp"
#include "spikehpo/tuner.hpp"

namespace spikehpo {

// ---------------------------------------------------------------------------
// Configuration

/// "<integer><unit>", unit one of s, m, h, d. Returns seconds.
inline std::int64_t parse_duration(const std::string& text) {
  if (text.size() < 2) throw ConfigError("duration '" + text + "' must look like <integer><s|m|h|d>");
  const char unit = text.back();
  std::int64_t mult = 0;
  switch (unit) {
    case 's': mult = 1; break;
    case 'm': mult = 60; break;
    case 'h': mult = 3600; break;
    case 'd': mult = 86400; break;
    default: throw ConfigError("duration '" + text + "': unknown unit '" + std::string(1, unit) + "'");
  }
  std::int64_t n = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size() - 1;
  const auto [ptr, ec] = std::from_chars(first, last, n);
  if (ec != std::errc{} || ptr != last || n < 0) throw ConfigError("duration '" + text + "': missing or invalid number");
  return n * mult;
}

struct ExperimentConfig {
  std::string experiment_name = "experiment";
  fs::path working_dir = ".";
  std::string trial_command = "spikehpo trial-builtin";
  fs::path trial_code_dir = ".";
  SearchSpace search_space;
  TunerSettings tuner;
  AssessorSettings assessor;
  std::size_t max_trial_number = 1000;
  std::string max_experiment_duration = "100d";
  std::size_t trial_concurrency = 1;
  std::vector<int> resource_slots;  // abstract device ids; empty = no slot accounting
  std::size_t max_trials_per_slot = 1;
  std::uint64_t seed = 42;
  /// Accepted and echoed, no behavior (use_active_gpu, gpu_mem_frac, ...).
  Json inert = Json::object();

  std::int64_t duration_seconds() const { return parse_duration(max_experiment_duration); }

  void validate() const {
    if (experiment_name.empty()) throw ConfigError("experiment_name must be non-empty");
    if (trial_command.empty()) throw ConfigError("trial_command must be non-empty");
    if (trial_concurrency < 1) throw ConfigError("trial_concurrency must be >= 1");
    if (max_trial_number < 1) throw ConfigError("max_trial_number must be >= 1");
    if (!resource_slots.empty()) {
      if (max_trials_per_slot < 1) throw ConfigError("max_trials_per_slot must be >= 1");
      if (trial_concurrency > resource_slots.size() * max_trials_per_slot)
        throw ConfigError("trial_concurrency exceeds resource_slots x max_trials_per_slot");
      std::set<int> uniq(resource_slots.begin(), resource_slots.end());
      if (uniq.size() != resource_slots.size()) throw ConfigError("resource_slots must be distinct");
    }
    (void)duration_seconds();
  }
};

inline fs::path expand_home(const std::string& p) {
  if (p.rfind("~/", 0) == 0 || p == "~") {
    const char* home = std::getenv("HOME");
    return fs::path(home ? home : "") / p.substr(p.size() > 1 ? 2 : 1);
  }
  return p;
}

inline ExperimentConfig parse_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a map");
  static const std::set<std::string> known = {
      "experiment_name", "working_dir",   "trial_command",   "trial_code_dir",     "search_space",
      "tuner",           "assessor",      "max_trial_number", "max_experiment_duration", "trial_concurrency",
      "resource_slots",  "max_trials_per_slot", "seed"};
  ExperimentConfig c;
  try {
    c.experiment_name = j.value("experiment_name", c.experiment_name);
    c.working_dir = expand_home(j.value("working_dir", c.working_dir.string()));
    c.trial_command = j.value("trial_command", c.trial_command);
    c.trial_code_dir = expand_home(j.value("trial_code_dir", c.trial_code_dir.string()));
    if (j.contains("search_space")) c.search_space = parse_search_space(j["search_space"]);
    if (j.contains("tuner")) {
      const auto& t = j["tuner"];
      c.tuner.name = t.value("name", c.tuner.name);
      if (c.tuner.name != "Anneal" && c.tuner.name != "Random")
        throw ConfigError("tuner.name must be 'Anneal' or 'Random'");
      c.tuner.optimize_mode = parse_optimize_mode(t.value("optimize_mode", std::string("maximize")));
      c.tuner.reseed_every = t.value("reseed_every", c.tuner.reseed_every);
      c.tuner.t0 = t.value("t0", c.tuner.t0);
      c.tuner.decay = t.value("decay", c.tuner.decay);
      c.tuner.warmup = t.value("warmup", c.tuner.warmup);
    }
    if (j.contains("assessor")) {
      const auto& a = j["assessor"];
      c.assessor.name = a.value("name", c.assessor.name);
      if (c.assessor.name != "Medianstop" && c.assessor.name != "None")
        throw ConfigError("assessor.name must be 'Medianstop' or 'None'");
      c.assessor.optimize_mode = parse_optimize_mode(a.value("optimize_mode", std::string("maximize")));
      c.assessor.start_step = a.value("start_step", c.assessor.start_step);
      c.assessor.quorum = a.value("quorum", c.assessor.quorum);
    }
    c.max_trial_number = j.value("max_trial_number", c.max_trial_number);
    c.max_experiment_duration = j.value("max_experiment_duration", c.max_experiment_duration);
    c.trial_concurrency = j.value("trial_concurrency", c.trial_concurrency);
    if (j.contains("resource_slots")) c.resource_slots = j["resource_slots"].get<std::vector<int>>();
    c.max_trials_per_slot = j.value("max_trials_per_slot", c.max_trials_per_slot);
    c.seed = j.value("seed", c.seed);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) c.inert[k] = v;
  c.validate();
  return c;
}

inline Json to_json(const ExperimentConfig& c) {
  Json j = Json::object();
  j["experiment_name"] = c.experiment_name;
  j["working_dir"] = c.working_dir.string();
  j["trial_command"] = c.trial_command;
  j["trial_code_dir"] = c.trial_code_dir.string();
  j["search_space"] = to_json(c.search_space);
  j["tuner"] = Json{{"name", c.tuner.name},   {"optimize_mode", to_string(c.tuner.optimize_mode)},
                    {"reseed_every", c.tuner.reseed_every}, {"t0", c.tuner.t0},
                    {"decay", c.tuner.decay}, {"warmup", c.tuner.warmup}};
  j["assessor"] = Json{{"name", c.assessor.name},
                       {"optimize_mode", to_string(c.assessor.optimize_mode)},
                       {"start_step", c.assessor.start_step},
                       {"quorum", c.assessor.quorum}};
  j["max_trial_number"] = c.max_trial_number;
  j["max_experiment_duration"] = c.max_experiment_duration;
  j["trial_concurrency"] = c.trial_concurrency;
  j["resource_slots"] = c.resource_slots;
  j["max_trials_per_slot"] = c.max_trials_per_slot;
  j["seed"] = c.seed;
  for (const auto& [k, v] : c.inert.items()) j[k] = v;
  return j;
}

inline ExperimentConfig load_config(const fs::path& path) {
  auto cfg = parse_config(read_json_file(path));
  // Relative paths are relative to the config file.
  const auto base = fs::absolute(path).parent_path();
  if (cfg.working_dir.is_relative()) cfg.working_dir = base / cfg.working_dir;
  if (cfg.trial_code_dir.is_relative()) cfg.trial_code_dir = base / cfg.trial_code_dir;
  cfg.working_dir = cfg.working_dir.lexically_normal();
  cfg.trial_code_dir = cfg.trial_code_dir.lexically_normal();
  return cfg;
}

// ---------------------------------------------------------------------------
// Identifiers and scheduling

/// 8 characters over [a-zA-Z0-9].
inline std::string make_token(Rng& rng) {
  static constexpr char alphabet[] = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
  std::string s(8, '\0');
  for (auto& ch : s) ch = alphabet[rng.below(sizeof(alphabet) - 1)];
  return s;
}

/// Trial ids, unique within one generator.
class TrialIdGenerator {
public:
  explicit TrialIdGenerator(std::uint64_t seed) : rng_(seed) {}
  void reserve(const std::string& id) { used_.insert(id); }
  std::string next() {
    while (true) {
      auto id = make_token(rng_);
      if (used_.insert(id).second) return id;
    }
  }

private:
  Rng rng_;
  std::set<std::string> used_;
};

struct SchedulerLimits {
  std::size_t trial_concurrency = 1;
  std::vector<int> slots;  // empty: no slot accounting
  std::size_t max_trials_per_slot = 1;
};

struct Placement {
  std::string trial_id;
  std::optional<int> slot;
};

/// Places waiting trials (in sequence order) while the concurrency limit and
/// per-slot caps allow; each goes to the least-occupied slot, ties to the
/// lowest slot id.
inline std::vector<Placement> schedule(const SchedulerLimits& lim, const std::vector<const TrialRecord*>& running,
                                       std::vector<const TrialRecord*> waiting) {
  std::sort(waiting.begin(), waiting.end(),
            [](const TrialRecord* a, const TrialRecord* b) { return a->sequence_id < b->sequence_id; });
  std::map<int, std::size_t> occupancy;
  for (int s : lim.slots) occupancy[s] = 0;
  for (const auto* r : running)
    if (r->slot && occupancy.count(*r->slot)) ++occupancy[*r->slot];

  std::vector<Placement> out;
  std::size_t active = running.size();
  for (const auto* w : waiting) {
    if (active >= lim.trial_concurrency) break;
    if (lim.slots.empty()) {
      out.push_back({w->trial_id, std::nullopt});
      ++active;
      continue;
    }
    std::optional<int> pick;
    for (const auto& [slot, n] : occupancy) {
      if (n >= lim.max_trials_per_slot) continue;
      if (!pick || n < occupancy[*pick]) pick = slot;
    }
    if (!pick) break;
    ++occupancy[*pick];
    out.push_back({w->trial_id, pick});
    ++active;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Engine

struct EngineOptions {
  /// Continue an existing experiment directory instead of starting anew.
  std::optional<fs::path> resume_dir;
  /// Extra stop condition polled once per tick.
  std::function<bool()> should_stop;
  std::ostream* log = nullptr;
  std::chrono::milliseconds poll_interval{100};
  /// Prepended to PATH for trial commands; defaults to the running binary's dir.
  std::optional<fs::path> tool_dir;
};

inline ExperimentLayout layout_for(const ExperimentConfig& c, const std::string& experiment_id) {
  return ExperimentLayout{c.working_dir, c.experiment_name, experiment_id};
}

/// Layout of an existing experiment directory, from its journal.
inline ExperimentLayout layout_from_journal(const JournalState& st) {
  return ExperimentLayout{fs::path(st.config.value("working_dir", std::string(".")).c_str()),
                          st.config.value("experiment_name", std::string("experiment")), st.experiment_id};
}

/// Marks trials that were Waiting/Running when the engine died as Failed and
/// kills any surviving trial process groups. The journal is first cut back to
/// its last complete line.
inline JournalState recover_experiment(const fs::path& experiment_dir, std::ostream* log = nullptr) {
  const auto journal_path = experiment_dir / "journal";
  std::uint64_t good = 0;
  auto st = replay_journal(journal_path, &good);
  if (fs::file_size(journal_path) != good) fs::resize_file(journal_path, good);
  JournalWriter writer(journal_path);
  auto emit = [&](const Json& e) {
    writer.write(e);
    st.apply(e);
  };
  emit(event::recovered(now_ms()));
  for (auto& r : st.records) {
    if (is_terminal(r.status)) continue;
    if (r.pid && process_group_alive(static_cast<pid_t>(*r.pid))) {
      ::kill(-static_cast<pid_t>(*r.pid), SIGKILL);
    }
    if (log) *log << "recovery: trial " << r.trial_id << " was " << to_string(r.status) << ", marked Failed\n";
    emit(event::trial_ended(r.trial_id, TrialStatus::Failed, "interrupted by engine restart", now_ms()));
  }
  return st;
}

class Engine {
public:
  Engine(ExperimentConfig cfg, EngineOptions opts = {})
      : cfg_(std::move(cfg)),
        opts_(std::move(opts)),
        tuner_(cfg_.tuner, cfg_.seed),
        assessor_(cfg_.assessor),
        ids_(cfg_.seed ^ 0x9e3779b97f4a7c15ULL) {
    cfg_.validate();
  }

  /// Runs to completion; returns the final journal state.
  JournalState run() {
    start();
    while (true) {
      if (!stop_requested_ && stop_condition()) request_stop("user stop");
      poll_running();
      if (!stop_requested_) create_trials();
      launch_waiting();
      if (running_.empty() && waiting_count() == 0 && !can_create()) break;
      std::this_thread::sleep_for(opts_.poll_interval);
    }
    emit(event::experiment_ended(end_reason(), now_ms()));
    log("experiment finished: " + end_reason());
    return state_;
  }

  const JournalState& state() const { return state_; }
  const ExperimentLayout& layout() const { return layout_; }
  const AnnealTuner& tuner() const { return tuner_; }

private:
  struct Running {
    pid_t pid;
    MetricsReader reader;
  };

  void start() {
    if (opts_.resume_dir) {
      state_ = recover_experiment(*opts_.resume_dir, opts_.log);
      layout_ = layout_from_journal(state_);
      layout_.working_dir = cfg_.working_dir;
      rebuild_from_state();
    } else {
      Rng idrng = Rng::derive(cfg_.seed, static_cast<std::uint64_t>(now_ms()));
      layout_ = layout_for(cfg_, make_token(idrng));
      try {
        layout_.create_all();
      } catch (const fs::filesystem_error& e) {
        throw ConfigError(std::string("working directory is not writable: ") + e.what());
      }
      std::ofstream ss(layout_.searchspace_file());
      ss << serialize_search_space(cfg_.search_space) << '\n';
      if (!ss) throw ConfigError("cannot write search space file in " + layout_.experiment_dir().string());
    }
    writer_.emplace(layout_.journal_file());
    engine_log_.open(layout_.logs_dir() / "engine.log", std::ios::app);
    if (!opts_.resume_dir) emit(event::experiment(layout_.id, to_json(cfg_), now_ms()));
    log("experiment " + layout_.id + " at " + layout_.experiment_dir().string());
  }

  void rebuild_from_state() {
    for (const auto& r : state_.records) {
      ids_.reserve(r.trial_id);
      for (const auto& m : r.intermediates) assessor_.record(r.trial_id, m.step, m.default_value());
      if (r.status == TrialStatus::Succeeded && r.final) {
        assessor_.complete(r.trial_id);
        tuner_.observe(r.assignment, r.final->default_value());
      }
    }
    tuner_.restore_progress(state_.records.size());
  }

  bool stop_condition() {
    if (opts_.should_stop && opts_.should_stop()) return true;
    std::error_code ec;
    return fs::exists(layout_.stop_file(), ec);
  }

  void request_stop(const std::string& why) {
    stop_requested_ = true;
    stop_reason_ = why;
    log("stop requested: " + why);
    for (auto& [id, run] : running_) {
      terminate_group(run.pid);
      emit(event::trial_ended(id, TrialStatus::Canceled, why, now_ms()));
    }
    running_.clear();
    for (const auto& r : state_.records)
      if (r.status == TrialStatus::Waiting) emit(event::trial_ended(r.trial_id, TrialStatus::Canceled, why, now_ms()));
  }

  bool budget_left() const {
    const auto elapsed = now_ms() - state_.started_at;
    return elapsed < cfg_.duration_seconds() * 1000;
  }

  bool can_create() const {
    return !stop_requested_ && state_.records.size() < cfg_.max_trial_number && budget_left();
  }

  std::size_t waiting_count() const {
    return static_cast<std::size_t>(std::count_if(state_.records.begin(), state_.records.end(),
                                                  [](const auto& r) { return r.status == TrialStatus::Waiting; }));
  }

  std::string end_reason() const {
    if (stop_requested_) return stop_reason_;
    if (state_.records.size() >= cfg_.max_trial_number) return "max_trial_number reached";
    return "max_experiment_duration reached";
  }

  void create_trials() {
    while (can_create() && running_.size() + waiting_count() < cfg_.trial_concurrency) {
      const std::size_t seq = state_.records.size();
      if (tuner_.maybe_reseed(seq)) log("tuner reseeded at sequence id " + std::to_string(seq));
      const auto assignment = tuner_.propose(cfg_.search_space);
      const auto id = ids_.next();
      emit(event::trial_created(seq, id, assignment, now_ms()));
    }
  }

  void launch_waiting() {
    std::vector<const TrialRecord*> running, waiting;
    for (const auto& r : state_.records) {
      if (r.status == TrialStatus::Running) running.push_back(&r);
      if (r.status == TrialStatus::Waiting) waiting.push_back(&r);
    }
    const auto placements =
        schedule(SchedulerLimits{cfg_.trial_concurrency, cfg_.resource_slots, cfg_.max_trials_per_slot}, running, waiting);
    for (const auto& p : placements) launch(*state_.find(p.trial_id), p.slot);
  }

  void launch(const TrialRecord& rec, std::optional<int> slot) {
    const auto dir = layout_.trial_dir(rec.trial_id);
    const auto trial_id = rec.trial_id;
    try {
      fs::create_directories(dir);
      write_params_file(dir / "parameter.json", rec.assignment);
      std::ofstream(dir / "metrics").close();
    } catch (const std::exception& e) {
      // Waiting -> Failed is allowed for trials that never started.
      emit(event::trial_ended(trial_id, TrialStatus::Failed, std::string("setup failed: ") + e.what(), now_ms()));
      return;
    }

    SpawnRequest req;
    req.command = cfg_.trial_command;
    req.cwd = cfg_.trial_code_dir;
    req.stdout_file = dir / "stdout";
    req.stderr_file = dir / "stderr";
    req.env = {{env::experiment_id, layout_.id},
               {env::trial_id, trial_id},
               {env::sequence_id, std::to_string(rec.sequence_id)},
               {env::params_file, (dir / "parameter.json").string()},
               {env::metrics_file, (dir / "metrics").string()},
               {env::experiment_name, cfg_.experiment_name},
               {env::working_dir, cfg_.working_dir.string()},
               {env::experiment_seed, std::to_string(cfg_.seed)}};
    if (slot) req.env.emplace_back(env::slot, std::to_string(*slot));
    const auto tool_dir = opts_.tool_dir ? *opts_.tool_dir : self_executable_dir();
    if (!tool_dir.empty()) {
      const char* path = std::getenv("PATH");
      req.env.emplace_back("PATH", tool_dir.string() + (path ? std::string(":") + path : std::string()));
    }
    const pid_t pid = spawn(req);
    emit(event::trial_started(trial_id, slot, pid, now_ms()));
    running_.emplace(trial_id, Running{pid, MetricsReader(dir / "metrics")});
    log("trial " + trial_id + " (#" + std::to_string(rec.sequence_id) + ") started, pid " + std::to_string(pid) +
        (slot ? ", slot " + std::to_string(*slot) : std::string()));
  }

  /// Returns true if the trial was early-stopped while handling the batch.
  bool ingest(const std::string& id, const std::vector<MetricReport>& reports, bool alive) {
    for (const auto& rep : reports) {
      auto* rec = state_.find(id);
      if (rep.kind == MetricKind::intermediate) {
        if (!assessor_.record(id, rep.step, rep.default_value())) {
          log("trial " + id + ": " + assessor_.diagnostics().back());
          continue;
        }
        emit(event::metric(id, rep));
        if (alive && cfg_.assessor.name == "Medianstop" && assessor_.assess(id, rep.step) == Verdict::Stop) {
          terminate_group(running_.at(id).pid);
          running_.erase(id);
          emit(event::trial_ended(id, TrialStatus::EarlyStopped,
                                  "median stop at step " + std::to_string(rep.step), now_ms()));
          log("trial " + id + " early-stopped at step " + std::to_string(rep.step));
          return true;
        }
      } else {
        if (rec->final) {
          log("trial " + id + ": second final result ignored");
          continue;
        }
        emit(event::metric(id, rep));
      }
    }
    return false;
  }

  void poll_running() {
    std::vector<std::string> ids;
    for (const auto& [id, run] : running_) ids.push_back(id);
    for (const auto& id : ids) {
      auto& run = running_.at(id);
      if (ingest(id, run.reader.poll(), true)) continue;
      const auto code = try_wait(run.pid);
      if (!code) continue;
      bool torn = false;
      auto rest = run.reader.finish(torn);
      ingest(id, rest, false);
      for (const auto& d : run.reader.diagnostics()) log("trial " + id + ": " + d);
      running_.erase(id);
      finish_trial(id, *code);
    }
  }

  void finish_trial(const std::string& id, int code) {
    const auto* rec = state_.find(id);
    if (code == 0 && rec->final) {
      const double metric = rec->final->default_value();
      emit(event::trial_ended(id, TrialStatus::Succeeded, "", now_ms()));
      assessor_.complete(id);
      if (!tuner_.observe(state_.find(id)->assignment, metric)) log("tuner rejected metric of trial " + id);
      log("trial " + id + " succeeded, default = " + format_real(metric));
    } else {
      const std::string why = code != 0 ? "exit code " + std::to_string(code) : "no final result reported";
      emit(event::trial_ended(id, TrialStatus::Failed, why, now_ms()));
      log("trial " + id + " failed: " + why);
    }
  }

  void emit(const Json& e) {
    writer_->write(e);
    state_.apply(e);
  }

  void log(const std::string& msg) {
    if (engine_log_) engine_log_ << now_ms() << " " << msg << '\n' << std::flush;
    if (opts_.log) *opts_.log << msg << '\n';
  }

  ExperimentConfig cfg_;
  EngineOptions opts_;
  AnnealTuner tuner_;
  MedianStopAssessor assessor_;
  TrialIdGenerator ids_;
  ExperimentLayout layout_;
  JournalState state_;
  std::optional<JournalWriter> writer_;
  std::ofstream engine_log_;
  std::map<std::string, Running> running_;
  bool stop_requested_ = false;
  std::string stop_reason_;
};

inline JournalState run_experiment(const ExperimentConfig& cfg, EngineOptions opts = {}) {
  Engine engine(cfg, std::move(opts));
  return engine.run();
}

}  // namespace spikehpo
