#pragma once

// Append-only experiment journal: one JSON event per line. The engine keeps
// its trial table by applying the very events it writes, so replaying the
// file reproduces that table exactly.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "spikehpo/protocol.hpp"
#include "spikehpo/searchspace.hpp"

namespace spikehpo {

enum class TrialStatus { Waiting, Running, Succeeded, Failed, EarlyStopped, Canceled };

inline const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::Waiting: return "Waiting";
    case TrialStatus::Running: return "Running";
    case TrialStatus::Succeeded: return "Succeeded";
    case TrialStatus::Failed: return "Failed";
    case TrialStatus::EarlyStopped: return "EarlyStopped";
    case TrialStatus::Canceled: return "Canceled";
  }
  return "?";
}

inline TrialStatus parse_status(const std::string& s) {
  for (auto st : {TrialStatus::Waiting, TrialStatus::Running, TrialStatus::Succeeded, TrialStatus::Failed,
                  TrialStatus::EarlyStopped, TrialStatus::Canceled})
    if (s == to_string(st)) return st;
  throw SchemaError("unknown trial status '" + s + "'");
}

inline bool is_terminal(TrialStatus s) { return s != TrialStatus::Waiting && s != TrialStatus::Running; }

struct TrialRecord {
  std::size_t sequence_id = 0;
  std::string trial_id;
  TrialStatus status = TrialStatus::Waiting;
  ParamAssignment assignment;
  std::vector<MetricReport> intermediates;
  std::optional<MetricReport> final;
  std::optional<int> slot;
  std::optional<long> pid;
  std::int64_t created_at = 0;
  std::optional<std::int64_t> started_at;
  std::optional<std::int64_t> ended_at;
  std::string reason;

  bool operator==(const TrialRecord&) const = default;
};

inline std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Event constructors.
namespace event {
inline Json experiment(const std::string& id, const Json& config, std::int64_t t) {
  return Json{{"event", "experiment"}, {"experiment_id", id}, {"config", config}, {"time", t}};
}
inline Json trial_created(std::size_t seq, const std::string& trial_id, const ParamAssignment& a, std::int64_t t) {
  return Json{{"event", "trial_created"}, {"sequence_id", seq}, {"trial_id", trial_id},
              {"assignment", to_json(a)},   {"time", t}};
}
inline Json trial_started(const std::string& trial_id, std::optional<int> slot, long pid, std::int64_t t) {
  Json j{{"event", "trial_started"}, {"trial_id", trial_id}, {"pid", pid}, {"time", t}};
  j["slot"] = slot ? Json(*slot) : Json(nullptr);
  return j;
}
inline Json metric(const std::string& trial_id, const MetricReport& r) {
  return Json{{"event", "metric"}, {"trial_id", trial_id}, {"report", to_json(r)}};
}
inline Json trial_ended(const std::string& trial_id, TrialStatus s, const std::string& reason, std::int64_t t) {
  return Json{{"event", "trial_ended"}, {"trial_id", trial_id}, {"status", to_string(s)}, {"reason", reason}, {"time", t}};
}
inline Json experiment_ended(const std::string& reason, std::int64_t t) {
  return Json{{"event", "experiment_ended"}, {"reason", reason}, {"time", t}};
}
inline Json recovered(std::int64_t t) { return Json{{"event", "recovered"}, {"time", t}}; }
}  // namespace event

/// State reconstructed from journal events.
class JournalState {
public:
  std::string experiment_id;
  Json config = Json::object();
  std::int64_t started_at = 0;
  std::optional<std::int64_t> ended_at;
  std::string end_reason;
  std::vector<TrialRecord> records;  // by sequence id
  std::vector<std::string> warnings;

  TrialRecord* find(const std::string& trial_id) {
    for (auto& r : records)
      if (r.trial_id == trial_id) return &r;
    return nullptr;
  }
  const TrialRecord* find(const std::string& trial_id) const {
    return const_cast<JournalState*>(this)->find(trial_id);
  }

  std::int64_t last_event_time() const { return last_time_; }

  void apply(const Json& e) {
    const auto kind = e.at("event").get<std::string>();
    if (e.contains("time")) last_time_ = std::max(last_time_, e["time"].get<std::int64_t>());
    if (kind == "experiment") {
      experiment_id = e.at("experiment_id").get<std::string>();
      config = e.at("config");
      started_at = e.at("time").get<std::int64_t>();
    } else if (kind == "trial_created") {
      TrialRecord r;
      r.sequence_id = e.at("sequence_id").get<std::size_t>();
      if (r.sequence_id != records.size())
        throw SchemaError("journal: sequence id " + std::to_string(r.sequence_id) + " is not dense");
      r.trial_id = e.at("trial_id").get<std::string>();
      r.assignment = assignment_from_json(e.at("assignment"));
      r.created_at = e.at("time").get<std::int64_t>();
      records.push_back(std::move(r));
    } else if (kind == "trial_started") {
      auto& r = require(e);
      transition(r, TrialStatus::Running);
      if (!e.at("slot").is_null()) r.slot = e["slot"].get<int>();
      r.pid = e.at("pid").get<long>();
      r.started_at = e.at("time").get<std::int64_t>();
    } else if (kind == "metric") {
      auto& r = require(e);
      const auto rep = metric_from_json(e.at("report"));
      if (rep.kind == MetricKind::intermediate)
        r.intermediates.push_back(rep);
      else
        r.final = rep;
    } else if (kind == "trial_ended") {
      auto& r = require(e);
      transition(r, parse_status(e.at("status").get<std::string>()));
      r.ended_at = e.at("time").get<std::int64_t>();
      r.reason = e.value("reason", "");
      if (r.status != TrialStatus::Succeeded) r.final.reset();
    } else if (kind == "experiment_ended") {
      ended_at = e.at("time").get<std::int64_t>();
      end_reason = e.value("reason", "");
    } else if (kind == "recovered") {
      ended_at.reset();
      end_reason.clear();
    } else {
      throw SchemaError("journal: unknown event '" + kind + "'");
    }
  }

private:
  TrialRecord& require(const Json& e) {
    auto* r = find(e.at("trial_id").get<std::string>());
    if (r == nullptr) throw SchemaError("journal: event for unknown trial '" + e["trial_id"].get<std::string>() + "'");
    return *r;
  }

  static void transition(TrialRecord& r, TrialStatus to) {
    const bool ok = (r.status == TrialStatus::Waiting && (to == TrialStatus::Running || to == TrialStatus::Canceled ||
                                                          to == TrialStatus::Failed)) ||
                    (r.status == TrialStatus::Running && is_terminal(to));
    if (!ok)
      throw SchemaError(std::string("journal: illegal transition ") + to_string(r.status) + " -> " + to_string(to) +
                        " for trial " + r.trial_id);
    r.status = to;
  }

  std::int64_t last_time_ = 0;
};

/// Reads the journal, dropping an unterminated or unparseable last line.
/// `good_bytes` receives the length of the well-formed prefix.
inline JournalState replay_journal(const std::filesystem::path& path, std::uint64_t* good_bytes = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("journal " + path.string() + " not found");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  JournalState st;
  std::size_t pos = 0;
  std::uint64_t good = 0;
  while (pos < data.size()) {
    const auto nl = data.find('\n', pos);
    if (nl == std::string::npos) {
      st.warnings.push_back("dropped torn final journal line");
      break;
    }
    const auto line = data.substr(pos, nl - pos);
    Json e;
    try {
      e = Json::parse(line);
    } catch (const Json::exception&) {
      // Only the tail can be torn; anything earlier is corruption.
      if (data.find('\n', nl + 1) == std::string::npos && nl + 1 >= data.size()) {
        st.warnings.push_back("dropped unparseable final journal line");
        break;
      }
      throw SchemaError("journal line is corrupt: " + line);
    }
    st.apply(e);
    pos = nl + 1;
    good = pos;
  }
  if (good_bytes) *good_bytes = good;
  return st;
}

/// Single-owner appender; every event is one write(2).
class JournalWriter {
public:
  explicit JournalWriter(std::filesystem::path path) : path_(std::move(path)) {}

  void write(const Json& e) { append_line(path_, e.dump()); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

}  // namespace spikehpo
