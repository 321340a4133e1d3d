#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "spikehpo/tuner.hpp"

namespace spikehpo {

enum class Verdict { Continue, Stop };

struct AssessorSettings {
  std::string name = "Medianstop";
  OptimizeMode optimize_mode = OptimizeMode::maximize;
  std::size_t start_step = 10;
  /// Completed trials needed at a step before any Stop.
  std::size_t quorum = 3;
};

/// Median stopping rule over the "default" intermediate stream.
///
/// At step s >= start_step, with at least `quorum` naturally completed trials
/// whose streams reach s: stop the trial if its best value over steps 1..s is
/// strictly worse than the lower median of the completed trials' running means
/// at s.
class MedianStopAssessor {
public:
  explicit MedianStopAssessor(AssessorSettings settings = {}) : settings_(std::move(settings)) {}

  const AssessorSettings& settings() const { return settings_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

  /// Appends `value` if `step` is the next dense step (1-based). Out-of-order
  /// steps are logged and dropped; returns whether the value was kept.
  bool record(const std::string& trial_id, std::size_t step, double value) {
    auto& stream = streams_[trial_id];
    if (step != stream.size() + 1) {
      diagnostics_.push_back("trial " + trial_id + ": out-of-order step " + std::to_string(step) +
                             " (expected " + std::to_string(stream.size() + 1) + "), dropped");
      return false;
    }
    stream.push_back(value);
    return true;
  }

  /// Marks a trial's stream as final (it finished on its own).
  void complete(const std::string& trial_id) {
    streams_.try_emplace(trial_id);
    completed_.insert(trial_id);
  }

  std::size_t stream_length(const std::string& trial_id) const {
    const auto it = streams_.find(trial_id);
    return it == streams_.end() ? 0 : it->second.size();
  }

  const std::set<std::string>& completed() const { return completed_; }

  Verdict assess(const std::string& trial_id, std::size_t step) const {
    const auto it = streams_.find(trial_id);
    if (it == streams_.end()) throw Error("assessor: unknown trial '" + trial_id + "'");
    const auto& own = it->second;
    if (step == 0 || own.size() < step) throw Error("assessor: trial '" + trial_id + "' has fewer than step values");
    if (step < settings_.start_step) return Verdict::Continue;

    std::vector<double> means;
    for (const auto& id : completed_) {
      if (id == trial_id) continue;
      const auto& s = streams_.at(id);
      if (s.size() < step) continue;
      double sum = 0.0;
      for (std::size_t i = 0; i < step; ++i) sum += s[i];
      means.push_back(sum / static_cast<double>(step));
    }
    if (means.size() < settings_.quorum) return Verdict::Continue;

    std::sort(means.begin(), means.end());
    const double median = means[(means.size() - 1) / 2];

    const bool maximize = settings_.optimize_mode == OptimizeMode::maximize;
    double best = own[0];
    for (std::size_t i = 1; i < step; ++i) best = maximize ? std::max(best, own[i]) : std::min(best, own[i]);
    const bool worse = maximize ? best < median : best > median;
    return worse ? Verdict::Stop : Verdict::Continue;
  }

private:
  AssessorSettings settings_;
  std::map<std::string, std::vector<double>> streams_;
  std::set<std::string> completed_;
  std::vector<std::string> diagnostics_;
};

}  // namespace spikehpo
