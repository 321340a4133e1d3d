#pragma once

// On-disk layout and the files trials leave behind: report_test lines, the
// retained best model, and per-trial result series.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "spikehpo/protocol.hpp"
#include "spikehpo/snn.hpp"

namespace spikehpo {

namespace fs = std::filesystem;

/// <working_dir>/{experiments, logs, models, reports, results}/<name>/<id>
struct ExperimentLayout {
  fs::path working_dir;
  std::string name;
  std::string id;

  fs::path under(const char* kind) const { return working_dir / kind / name / id; }
  fs::path experiment_dir() const { return under("experiments"); }
  fs::path logs_dir() const { return under("logs"); }
  fs::path models_dir() const { return under("models"); }
  fs::path reports_dir() const { return under("reports"); }
  fs::path results_dir() const { return under("results"); }

  fs::path journal_file() const { return experiment_dir() / "journal"; }
  fs::path searchspace_file() const { return experiment_dir() / "searchspace"; }
  fs::path stop_file() const { return experiment_dir() / "stop"; }
  fs::path trial_dir(const std::string& trial_id) const { return experiment_dir() / "trials" / trial_id; }
  fs::path report_file() const { return reports_dir() / "report_test"; }

  void create_all() const {
    for (const auto& d : {experiment_dir(), logs_dir(), models_dir(), reports_dir(), results_dir()})
      fs::create_directories(d);
  }
};

/// Shortest text that parses back to the same double.
inline std::string format_real(double x) { return Json(x).dump(); }

/// Appends "<test_acc> <sequence_id> <trial_id>".
inline void append_report(const fs::path& report_file, double test_acc, std::size_t sequence_id,
                          const std::string& trial_id) {
  append_line(report_file, format_real(test_acc) + " " + std::to_string(sequence_id) + " " + trial_id);
}

/// First column of every well-formed report line; malformed lines are
/// skipped and noted in `warnings`.
inline std::vector<double> read_report_values(const fs::path& report_file, std::vector<std::string>* warnings = nullptr) {
  std::vector<double> out;
  std::ifstream in(report_file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string first;
    ss >> first;
    char* end = nullptr;
    const double v = first.empty() ? 0.0 : std::strtod(first.c_str(), &end);
    if (first.empty() || end != first.c_str() + first.size() || !std::isfinite(v)) {
      if (warnings) warnings->push_back("report_test line " + std::to_string(lineno) + " is malformed: '" + line + "'");
      continue;
    }
    out.push_back(v);
  }
  return out;
}

/// Runs `persist` iff `test_best_val` is >= every value recorded in the
/// report file (ties are retained). Returns whether it persisted.
inline bool retain_best_model(const fs::path& report_file, double test_best_val, const std::function<void()>& persist,
                              std::vector<std::string>* warnings = nullptr) {
  const auto values = read_report_values(report_file, warnings);
  for (double v : values)
    if (v > test_best_val) return false;
  if (persist) persist();
  return true;
}

// ---------------------------------------------------------------------------
// Model blob: one JSON header line with tensor shapes, then the tensors as
// little-endian IEEE-754 doubles, row-major, in order W_in, W_rec, W_out, b_o.

namespace detail {
inline void put_le(std::ostream& out, double x) {
  auto bits = std::bit_cast<std::uint64_t>(x);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}
inline double get_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw SchemaError("model blob is truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline void write_model_blob(std::ostream& out, const snn::SrnnModel& m, const Json& metadata = Json::object()) {
  Json header = Json::object();
  header["format"] = "spikehpo-srnn";
  header["version"] = 1;
  header["tensors"] = Json::array({
      Json{{"name", "W_in"}, {"shape", {m.w_in.rows(), m.w_in.cols()}}},
      Json{{"name", "W_rec"}, {"shape", {m.w_rec.rows(), m.w_rec.cols()}}},
      Json{{"name", "W_out"}, {"shape", {m.w_out.rows(), m.w_out.cols()}}},
      Json{{"name", "b_o"}, {"shape", Json::array()}},
  });
  header["constants"] = Json{{"thr", m.thr},     {"alpha", m.alpha}, {"kappa", m.kappa},
                             {"gamma", m.gamma}, {"reset", snn::to_string(m.reset)},
                             {"t_crop", m.t_crop}, {"dt", m.dt}};
  header["metadata"] = metadata;
  out << header.dump() << '\n';
  for (const auto* w : {&m.w_in, &m.w_rec, &m.w_out})
    for (Eigen::Index r = 0; r < w->rows(); ++r)
      for (Eigen::Index c = 0; c < w->cols(); ++c) detail::put_le(out, (*w)(r, c));
  detail::put_le(out, m.b_o);
}

inline snn::SrnnModel read_model_blob(std::istream& in, Json* metadata = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("model blob has no header");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("model blob header is not JSON: ") + e.what());
  }
  if (header.value("format", "") != "spikehpo-srnn") throw SchemaError("not a spikehpo model blob");
  const auto& t = header.at("tensors");
  snn::SrnnModel m;
  std::array<snn::Matrix*, 3> mats{&m.w_in, &m.w_rec, &m.w_out};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto rows = t.at(i).at("shape").at(0).get<Eigen::Index>();
    const auto cols = t.at(i).at("shape").at(1).get<Eigen::Index>();
    mats[i]->resize(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) (*mats[i])(r, c) = detail::get_le(in);
  }
  m.b_o = detail::get_le(in);
  const auto& k = header.at("constants");
  m.thr = k.at("thr").get<double>();
  m.alpha = k.at("alpha").get<double>();
  m.kappa = k.at("kappa").get<double>();
  m.gamma = k.at("gamma").get<double>();
  m.reset = snn::parse_reset(k.at("reset").get<std::string>());
  m.t_crop = k.at("t_crop").get<int>();
  m.dt = k.at("dt").get<double>();
  if (metadata) *metadata = header.value("metadata", Json::object());
  snn::check_model(m);
  return m;
}

inline void write_json_file(const fs::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

inline Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return Json::parse(ss.str());
  } catch (const Json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

}  // namespace spikehpo
