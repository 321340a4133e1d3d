#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spikehpo/engine.hpp"

namespace spikehpo::report {

/// Rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::vector<std::size_t>> counts;

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }

  std::size_t trace() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < classes; ++i) n += counts[i][i];
    return n;
  }

  /// Percent; undefined (error) for an empty matrix.
  double accuracy() const {
    const auto n = total();
    if (n == 0) throw Error("accuracy is undefined for an empty confusion matrix");
    return static_cast<double>(trace()) / static_cast<double>(n) * 100.0;
  }
};

inline ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels, std::size_t k) {
  if (preds.size() != labels.size()) throw Error("predictions and labels differ in length");
  ConfusionMatrix cm{k, std::vector<std::vector<std::size_t>>(k, std::vector<std::size_t>(k, 0))};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0 || static_cast<std::size_t>(preds[i]) >= k ||
        static_cast<std::size_t>(labels[i]) >= k)
      throw Error("class index out of range at sample " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  return cm;
}

inline std::string to_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  out << "true\\pred";
  for (std::size_t j = 0; j < cm.classes; ++j) out << ',' << j;
  out << '\n';
  for (std::size_t i = 0; i < cm.classes; ++i) {
    out << i;
    for (std::size_t j = 0; j < cm.classes; ++j) out << ',' << cm.counts[i][j];
    out << '\n';
  }
  return out.str();
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"best training", "default", "test"};
  return cols;
}

/// Hyperparameter columns: the search-space order of the config snapshot.
inline std::vector<std::string> parameter_columns(const JournalState& st) {
  std::vector<std::string> cols;
  if (st.config.contains("search_space")) {
    for (const auto& [name, _] : st.config["search_space"].items()) cols.push_back(name);
    return cols;
  }
  for (const auto& r : st.records)
    for (const auto& [k, _] : r.assignment)
      if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
  return cols;
}

/// One row per Succeeded trial: hyperparameters, then best training
/// accuracy, best validation accuracy ("default") and test accuracy.
inline std::string export_parallel_coordinates(const JournalState& st) {
  const auto params = parameter_columns(st);
  std::ostringstream out;
  bool first = true;
  for (const auto& c : params) {
    out << (first ? "" : ",") << csv_field(c);
    first = false;
  }
  for (const auto& c : metric_columns()) {
    out << (first ? "" : ",") << csv_field(c);
    first = false;
  }
  out << '\n';
  for (const auto& r : st.records) {
    if (r.status != TrialStatus::Succeeded || !r.final) continue;
    first = true;
    for (const auto& c : params) {
      const auto it = r.assignment.find(c);
      out << (first ? "" : ",") << (it == r.assignment.end() ? "" : csv_field(to_string(it->second)));
      first = false;
    }
    for (const auto& c : metric_columns()) {
      const auto it = r.final->values.find(c);
      out << (first ? "" : ",") << (it == r.final->values.end() ? "" : format_real(it->second));
      first = false;
    }
    out << '\n';
  }
  return out.str();
}

inline JournalState load_journal(const fs::path& experiment_dir) {
  const auto path = experiment_dir / "journal";
  if (!fs::exists(path)) throw Error("no journal in " + experiment_dir.string());
  return replay_journal(path);
}

inline const TrialRecord* best_trial(const JournalState& st) {
  const auto mode = parse_optimize_mode(st.config.contains("tuner")
                                            ? st.config["tuner"].value("optimize_mode", std::string("maximize"))
                                            : std::string("maximize"));
  const TrialRecord* best = nullptr;
  for (const auto& r : st.records) {
    if (r.status != TrialStatus::Succeeded || !r.final) continue;
    if (!best || better(mode, r.final->default_value(), best->final->default_value())) best = &r;
  }
  return best;
}

inline std::map<TrialStatus, std::size_t> status_counts(const JournalState& st) {
  std::map<TrialStatus, std::size_t> counts;
  for (auto s : {TrialStatus::Waiting, TrialStatus::Running, TrialStatus::Succeeded, TrialStatus::Failed,
                 TrialStatus::EarlyStopped, TrialStatus::Canceled})
    counts[s] = 0;
  for (const auto& r : st.records) ++counts[r.status];
  return counts;
}

inline std::string status(const fs::path& experiment_dir) {
  const auto st = load_journal(experiment_dir);
  std::ostringstream out;
  out << "experiment " << st.experiment_id << " (" << st.config.value("experiment_name", std::string("?")) << ")\n";
  out << "trials: " << st.records.size() << '\n';
  for (const auto& [s, n] : status_counts(st)) out << "  " << to_string(s) << ": " << n << '\n';
  const auto end = st.ended_at ? *st.ended_at : now_ms();
  out << "elapsed: " << format_real(static_cast<double>(end - st.started_at) / 1000.0) << " s"
      << (st.ended_at ? " (finished: " + st.end_reason + ")" : std::string(" (running)")) << '\n';
  if (const auto* b = best_trial(st)) {
    out << "best default: " << format_real(b->final->default_value()) << " (trial " << b->trial_id << ", #"
        << b->sequence_id << ")\n";
    out << "best assignment: " << to_json(b->assignment).dump() << '\n';
  } else {
    out << "best default: none\n";
  }
  return out.str();
}

/// Test-set predictions a trial saved next to its results.
inline fs::path predictions_file(const ExperimentLayout& layout, const std::string& trial_id) {
  return layout.results_dir() / (trial_id + "_test_predictions");
}

inline ConfusionMatrix trial_confusion(const fs::path& experiment_dir, const std::string& trial_id) {
  const auto st = load_journal(experiment_dir);
  if (st.find(trial_id) == nullptr) throw Error("trial '" + trial_id + "' is not in the journal");
  const auto doc = read_json_file(predictions_file(layout_from_journal(st), trial_id));
  return confusion_matrix(doc.at("predictions").get<std::vector<int>>(), doc.at("labels").get<std::vector<int>>(),
                          doc.at("n_classes").get<std::size_t>());
}

}  // namespace spikehpo::report
