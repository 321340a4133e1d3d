#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spikehpo/searchspace.hpp"

namespace spikehpo {

enum class OptimizeMode { maximize, minimize };

inline OptimizeMode parse_optimize_mode(const std::string& s) {
  if (s == "maximize") return OptimizeMode::maximize;
  if (s == "minimize") return OptimizeMode::minimize;
  throw ConfigError("optimize_mode must be 'maximize' or 'minimize', got '" + s + "'");
}

inline const char* to_string(OptimizeMode m) { return m == OptimizeMode::maximize ? "maximize" : "minimize"; }

/// `a` strictly better than `b` under the mode.
inline bool better(OptimizeMode m, double a, double b) { return m == OptimizeMode::maximize ? a > b : a < b; }

struct TunerSettings {
  std::string name = "Anneal";  // "Anneal" or "Random"
  OptimizeMode optimize_mode = OptimizeMode::maximize;
  double t0 = 1.0;
  double decay = 0.95;
  std::size_t warmup = 20;
  std::size_t reseed_every = 250;
};

struct Observation {
  ParamAssignment assignment;
  double metric = 0.0;
};

struct ReseedPolicy {
  std::size_t n_tr = 250;

  bool fires(std::size_t sequence_id) const { return n_tr > 0 && sequence_id > 0 && sequence_id % n_tr == 0; }
};

/// Annealing sampler: pure prior samples during warmup, afterwards Gaussian
/// (QUniform) or resample-with-probability-T (Choice) perturbations around the
/// best observation so far, with T = t0 * decay^k shrinking per proposal.
class AnnealTuner {
public:
  AnnealTuner(TunerSettings settings, std::uint64_t seed)
      : settings_(std::move(settings)), seed_(seed), rng_(Rng::derive(seed, 0)) {
    if (!(settings_.t0 > 0.0 && settings_.t0 <= 1.0)) throw ConfigError("tuner t0 must lie in (0, 1]");
    if (!(settings_.decay > 0.0 && settings_.decay < 1.0)) throw ConfigError("tuner decay must lie in (0, 1)");
  }

  const TunerSettings& settings() const { return settings_; }
  const std::vector<Observation>& history() const { return history_; }
  std::size_t proposals_made() const { return proposals_made_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

  /// Temperature of the next proposal. Counted from the last reseed.
  double temperature() const {
    return settings_.t0 * std::pow(settings_.decay, static_cast<double>(anneal_step_));
  }

  /// Index of the best history entry; earliest wins ties.
  std::optional<std::size_t> best_index() const {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < history_.size(); ++i)
      if (!best || better(settings_.optimize_mode, history_[i].metric, history_[*best].metric)) best = i;
    return best;
  }

  ParamAssignment propose(const SearchSpace& space) {
    ParamAssignment out;
    const auto best = best_index();
    const bool prior = settings_.name == "Random" || proposals_made_ < settings_.warmup || !best;
    if (prior) {
      out = sample_assignment(space, rng_);
    } else {
      const double temp = temperature();
      out = perturb(space, history_[*best].assignment, temp);
    }
    ++proposals_made_;
    ++anneal_step_;
    return out;
  }

  /// Returns false (and logs a diagnostic) for non-finite metrics.
  bool observe(const ParamAssignment& assignment, double final_metric) {
    if (!std::isfinite(final_metric)) {
      diagnostics_.push_back("rejected non-finite metric");
      return false;
    }
    history_.push_back({assignment, final_metric});
    return true;
  }

  /// Fresh stream from (seed, sequence_id) and temperature back to t0.
  /// History is kept.
  bool maybe_reseed(std::size_t sequence_id, const ReseedPolicy& policy) {
    if (!policy.fires(sequence_id)) return false;
    rng_ = Rng::derive(seed_, sequence_id);
    anneal_step_ = 0;
    return true;
  }

  bool maybe_reseed(std::size_t sequence_id) { return maybe_reseed(sequence_id, ReseedPolicy{settings_.reseed_every}); }

  /// Resume after `proposals` earlier proposals (engine restart). The stream
  /// is re-derived; temperature continues from the last reseed point.
  void restore_progress(std::size_t proposals) {
    proposals_made_ = proposals;
    const std::size_t n_tr = settings_.reseed_every;
    const std::size_t last_reseed = (n_tr > 0 && proposals > n_tr) ? ((proposals - 1) / n_tr) * n_tr : 0;
    anneal_step_ = proposals - last_reseed;
    rng_ = Rng::derive(seed_ ^ 0xa5a5a5a5a5a5a5a5ULL, proposals);
  }

private:
  ParamAssignment perturb(const SearchSpace& space, const ParamAssignment& center, double temp) {
    ParamAssignment out;
    for (const auto& [name, spec] : space.params()) {
      const auto it = center.find(name);
      if (it == center.end()) {
        out[name] = sample_param(spec, rng_);
        continue;
      }
      if (const auto* qu = std::get_if<QUniform>(&spec)) {
        const double sd = temp * (qu->high - qu->low);
        out[name] = qu->quantize(rng_.normal(as_double(it->second), sd));
      } else {
        const auto& ch = std::get<Choice>(spec);
        out[name] = rng_.bernoulli(temp) ? ch.values[rng_.below(ch.values.size())] : it->second;
      }
    }
    return out;
  }

  TunerSettings settings_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Observation> history_;
  std::size_t proposals_made_ = 0;
  std::size_t anneal_step_ = 0;
  std::vector<std::string> diagnostics_;
};

}  // namespace spikehpo
