#pragma once

// Engine <-> trial wire contract.
//
// The engine hands a trial its identity and two file paths through env vars:
//   HPO_EXPERIMENT_ID, HPO_TRIAL_ID, HPO_SEQUENCE_ID, HPO_PARAMS_FILE,
//   HPO_METRICS_FILE
// plus informational ones (HPO_EXPERIMENT_NAME, HPO_WORKING_DIR,
// HPO_EXPERIMENT_SEED, HPO_SLOT). The params file is a JSON map of
// name -> value. The metrics file is append-only JSON lines:
//   {"kind":"intermediate","step":k,"values":{"default":...,...}}
//   {"kind":"final","values":{"default":...,...}}

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spikehpo/searchspace.hpp"

namespace spikehpo {

namespace env {
inline constexpr const char* experiment_id = "HPO_EXPERIMENT_ID";
inline constexpr const char* trial_id = "HPO_TRIAL_ID";
inline constexpr const char* sequence_id = "HPO_SEQUENCE_ID";
inline constexpr const char* params_file = "HPO_PARAMS_FILE";
inline constexpr const char* metrics_file = "HPO_METRICS_FILE";
inline constexpr const char* experiment_name = "HPO_EXPERIMENT_NAME";
inline constexpr const char* working_dir = "HPO_WORKING_DIR";
inline constexpr const char* experiment_seed = "HPO_EXPERIMENT_SEED";
inline constexpr const char* slot = "HPO_SLOT";
}  // namespace env

enum class MetricKind { intermediate, final };

struct MetricReport {
  MetricKind kind = MetricKind::intermediate;
  std::size_t step = 0;  // intermediate only, 1-based
  OrderedMap<double> values;

  double default_value() const { return values.at("default"); }

  bool operator==(const MetricReport&) const = default;
};

inline void validate_metric_values(const OrderedMap<double>& values) {
  const auto it = values.find("default");
  if (it == values.end()) throw ProtocolError("metric report must contain a \"default\" entry");
  for (const auto& [k, v] : values)
    if (!std::isfinite(v)) throw ProtocolError("metric '" + k + "' is not finite");
}

inline Json to_json(const MetricReport& r) {
  Json j = Json::object();
  j["kind"] = r.kind == MetricKind::intermediate ? "intermediate" : "final";
  if (r.kind == MetricKind::intermediate) j["step"] = r.step;
  Json vals = Json::object();
  for (const auto& [k, v] : r.values) vals[k] = v;
  j["values"] = std::move(vals);
  return j;
}

inline MetricReport metric_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.contains("values") || !j["values"].is_object())
    throw ProtocolError("metrics line must be {\"kind\", [\"step\"], \"values\"}");
  MetricReport r;
  const auto kind = j["kind"].get<std::string>();
  if (kind == "intermediate") {
    r.kind = MetricKind::intermediate;
    if (!j.contains("step") || !j["step"].is_number_unsigned())
      throw ProtocolError("intermediate metric requires a positive integer step");
    r.step = j["step"].get<std::size_t>();
  } else if (kind == "final") {
    r.kind = MetricKind::final;
  } else {
    throw ProtocolError("unknown metric kind '" + kind + "'");
  }
  for (const auto& [k, v] : j["values"].items()) {
    if (!v.is_number()) throw ProtocolError("metric '" + k + "' is not a number");
    r.values[k] = v.get<double>();
  }
  validate_metric_values(r.values);
  return r;
}

struct TrialContext {
  std::string experiment_id;
  std::string trial_id;
  std::size_t sequence_id = 0;
  std::filesystem::path params_file;
  std::filesystem::path metrics_file;

  /// Optional extras; empty when unset.
  std::string experiment_name;
  std::filesystem::path working_dir;
  std::uint64_t experiment_seed = 0;
};

namespace detail {
inline std::string require_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') throw ProtocolError(std::string("environment variable ") + name + " is not set");
  return v;
}
inline std::string optional_env(const char* name) {
  const char* v = std::getenv(name);
  return v == nullptr ? std::string{} : std::string{v};
}
}  // namespace detail

/// Reads the trial's identity from the environment.
inline TrialContext context_from_env() {
  TrialContext ctx;
  ctx.experiment_id = detail::require_env(env::experiment_id);
  ctx.trial_id = detail::require_env(env::trial_id);
  const auto seq = detail::require_env(env::sequence_id);
  try {
    std::size_t pos = 0;
    ctx.sequence_id = std::stoull(seq, &pos);
    if (pos != seq.size()) throw std::invalid_argument(seq);
  } catch (const std::exception&) {
    throw ProtocolError("HPO_SEQUENCE_ID is not a non-negative integer: '" + seq + "'");
  }
  ctx.params_file = detail::require_env(env::params_file);
  ctx.metrics_file = detail::require_env(env::metrics_file);
  ctx.experiment_name = detail::optional_env(env::experiment_name);
  ctx.working_dir = detail::optional_env(env::working_dir);
  if (const auto s = detail::optional_env(env::experiment_seed); !s.empty()) ctx.experiment_seed = std::stoull(s);
  return ctx;
}

struct Identity {
  std::string experiment_id;
  std::string trial_id;
  std::size_t sequence_id;
};

inline Identity identity(const TrialContext& ctx) { return {ctx.experiment_id, ctx.trial_id, ctx.sequence_id}; }

inline void write_params_file(const std::filesystem::path& path, const ParamAssignment& assignment) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write parameter file " + path.string());
  out << to_json(assignment).dump() << '\n';
  if (!out) throw Error("cannot write parameter file " + path.string());
}

inline ParamAssignment read_params_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ProtocolError("parameter file " + path.string() + " is missing");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return assignment_from_json(Json::parse(ss.str()));
  } catch (const Json::exception& e) {
    throw ProtocolError("parameter file " + path.string() + " is corrupt: " + e.what());
  } catch (const SchemaError& e) {
    throw ProtocolError("parameter file " + path.string() + " is corrupt: " + e.what());
  }
}

/// Appends one line with a single write(2) on an O_APPEND descriptor.
inline void append_line(const std::filesystem::path& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open " + path.string() + ": " + std::strerror(errno));
  std::string buf = line;
  buf.push_back('\n');
  const char* p = buf.data();
  std::size_t left = buf.size();
  while (left > 0) {
    const ssize_t n = ::write(fd, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw Error("write to " + path.string() + " failed: " + std::strerror(err));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  ::close(fd);
}

/// Trial-side client of the protocol: the nni.* call surface.
class TrialClient {
public:
  explicit TrialClient(TrialContext ctx) : ctx_(std::move(ctx)) {}

  const TrialContext& context() const { return ctx_; }

  /// Idempotent: the file is read once and cached.
  const ParamAssignment& get_next_parameter() {
    if (!params_) params_ = read_params_file(ctx_.params_file);
    return *params_;
  }

  void report_intermediate_result(const OrderedMap<double>& values) {
    validate_metric_values(values);
    MetricReport r{MetricKind::intermediate, step_ + 1, values};
    append_line(ctx_.metrics_file, to_json(r).dump());
    ++step_;
  }

  void report_final_result(const OrderedMap<double>& values) {
    if (final_sent_) throw ProtocolError("final result already reported");
    validate_metric_values(values);
    MetricReport r{MetricKind::final, 0, values};
    append_line(ctx_.metrics_file, to_json(r).dump());
    final_sent_ = true;
  }

  std::size_t steps_reported() const { return step_; }

private:
  TrialContext ctx_;
  std::optional<ParamAssignment> params_;
  std::size_t step_ = 0;
  bool final_sent_ = false;
};

/// Engine-side incremental reader of a metrics file. Tracks a byte offset and
/// only consumes newline-terminated lines; an unterminated tail stays pending
/// until more bytes arrive or `finish()` declares it torn.
class MetricsReader {
public:
  explicit MetricsReader(std::filesystem::path path) : path_(std::move(path)) {}

  /// New complete reports since the last poll. Unparseable lines are dropped
  /// and noted in `diagnostics()`.
  std::vector<MetricReport> poll() {
    std::vector<MetricReport> out;
    std::ifstream in(path_, std::ios::binary);
    if (!in) return out;
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    if (size <= offset_) return out;
    in.seekg(static_cast<std::streamoff>(offset_));
    std::string chunk(size - offset_, '\0');
    in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
    chunk.resize(static_cast<std::size_t>(in.gcount()));

    std::size_t start = 0;
    while (true) {
      const auto nl = chunk.find('\n', start);
      if (nl == std::string::npos) break;
      const auto line = chunk.substr(start, nl - start);
      offset_ += nl - start + 1;
      start = nl + 1;
      if (line.empty()) continue;
      try {
        out.push_back(metric_from_json(Json::parse(line)));
      } catch (const std::exception& e) {
        diagnostics_.push_back(std::string("dropped metrics line: ") + e.what());
      }
    }
    return out;
  }

  /// Called after the writer exited: drains and reports whether a torn
  /// (unterminated) tail was discarded.
  std::vector<MetricReport> finish(bool& torn_tail) {
    auto out = poll();
    std::error_code ec;
    const auto size = std::filesystem::file_size(path_, ec);
    torn_tail = !ec && size > offset_;
    if (torn_tail) diagnostics_.push_back("dropped torn final metrics line");
    return out;
  }

  std::uint64_t offset() const { return offset_; }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
  std::filesystem::path path_;
  std::uint64_t offset_ = 0;
  std::vector<std::string> diagnostics_;
};

}  // namespace spikehpo
