#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "spikehpo/errors.hpp"
#include "spikehpo/rng.hpp"

namespace spikehpo {

using Json = nlohmann::ordered_json;

/// A hyperparameter value. Integral and real values are kept apart so that
/// 64 survives a round trip as an integer and 0.05 as a real.
using ParamValue = std::variant<std::int64_t, double, std::string>;

/// Insertion-ordered string-keyed map; iteration follows insertion order.
/// Linear lookup: these maps hold a handful of hyperparameters or metrics.
template <class T>
class OrderedMap {
public:
  using value_type = std::pair<std::string, T>;
  using iterator = typename std::vector<value_type>::iterator;
  using const_iterator = typename std::vector<value_type>::const_iterator;

  OrderedMap() = default;
  OrderedMap(std::initializer_list<value_type> init) {
    for (const auto& [k, v] : init) (*this)[k] = v;
  }

  T& operator[](const std::string& key) {
    if (auto it = find(key); it != end()) return it->second;
    items_.emplace_back(key, T{});
    return items_.back().second;
  }

  const T& at(const std::string& key) const {
    if (auto it = find(key); it != end()) return it->second;
    throw std::out_of_range("key '" + key + "' not found");
  }

  iterator find(const std::string& key) {
    return std::find_if(items_.begin(), items_.end(), [&](const value_type& p) { return p.first == key; });
  }
  const_iterator find(const std::string& key) const {
    return std::find_if(items_.begin(), items_.end(), [&](const value_type& p) { return p.first == key; });
  }
  bool contains(const std::string& key) const { return find(key) != end(); }

  std::size_t erase(const std::string& key) {
    auto it = find(key);
    if (it == end()) return 0;
    items_.erase(it);
    return 1;
  }

  iterator begin() { return items_.begin(); }
  iterator end() { return items_.end(); }
  const_iterator begin() const { return items_.begin(); }
  const_iterator end() const { return items_.end(); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  bool operator==(const OrderedMap&) const = default;

private:
  std::vector<value_type> items_;
};

using ParamAssignment = OrderedMap<ParamValue>;

inline bool is_numeric(const ParamValue& v) { return !std::holds_alternative<std::string>(v); }

inline double as_double(const ParamValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw SchemaError("expected a numeric value, got string '" + std::get<std::string>(v) + "'");
}

/// Numeric values compare by value (1 == 1.0); strings compare exactly.
inline bool same_value(const ParamValue& a, const ParamValue& b) {
  if (is_numeric(a) && is_numeric(b)) return as_double(a) == as_double(b);
  return a == b;
}

inline Json to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return Json(x); }, v);
}

inline ParamValue value_from_json(const Json& j) {
  if (j.is_number_integer()) return j.get<std::int64_t>();
  if (j.is_number_float()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw SchemaError("expected a scalar or string value, got: " + j.dump());
}

inline std::string to_string(const ParamValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  return to_json(v).dump();
}

inline Json to_json(const ParamAssignment& a) {
  Json j = Json::object();
  for (const auto& [k, v] : a) j[k] = to_json(v);
  return j;
}

inline ParamAssignment assignment_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("parameter assignment must be a map");
  ParamAssignment a;
  for (const auto& [k, v] : j.items()) a[k] = value_from_json(v);
  return a;
}

/// Quantized uniform: samples lie on multiples of `q` inside [low, high].
struct QUniform {
  double low = 0.0;
  double high = 0.0;
  double q = 1.0;
  /// Whether each of (low, high, q) was written as an integer token. When all
  /// three are, samples are integers.
  std::array<bool, 3> integer_token{false, false, false};

  bool integral() const { return integer_token[0] && integer_token[1] && integer_token[2]; }

  /// Snap a real onto the grid: half-away-from-zero rounding of x/q, then clip.
  /// Steps of the form 1/n are scaled by n instead, so 12 steps of 0.05
  /// print as 0.6 rather than 0.6000000000000001.
  ParamValue quantize(double x) const {
    const double inv = 1.0 / q;
    const double n = std::round(inv);
    const double grid = (n >= 1.0 && std::abs(inv - n) < 1e-9 * n) ? std::round(x * n) / n : std::round(x / q) * q;
    const double v = std::clamp(grid, low, high);
    if (integral()) return static_cast<std::int64_t>(std::llround(v));
    return v;
  }

  bool operator==(const QUniform&) const = default;
};

struct Choice {
  std::vector<ParamValue> values;

  std::size_t index_of(const ParamValue& v) const {
    for (std::size_t i = 0; i < values.size(); ++i)
      if (same_value(values[i], v)) return i;
    return values.size();
  }

  bool operator==(const Choice&) const = default;
};

using ParamSpec = std::variant<QUniform, Choice>;

inline bool in_domain(const ParamSpec& spec, const ParamValue& v) {
  if (const auto* qu = std::get_if<QUniform>(&spec)) {
    if (!is_numeric(v)) return false;
    const double x = as_double(v);
    if (x < qu->low || x > qu->high) return false;
    if (x == qu->low || x == qu->high) return true;
    const double k = x / qu->q;
    return std::abs(k - std::round(k)) < 1e-9;
  }
  const auto& ch = std::get<Choice>(spec);
  return ch.index_of(v) < ch.values.size();
}

/// Ordered map name -> ParamSpec. Immutable once parsed.
class SearchSpace {
public:
  SearchSpace() = default;

  void add(std::string name, ParamSpec spec) {
    if (name.empty()) throw SchemaError("parameter name must be non-empty");
    if (find(name) != nullptr) throw SchemaError("duplicate parameter name '" + name + "'");
    validate(name, spec);
    params_.emplace_back(std::move(name), std::move(spec));
  }

  const std::vector<std::pair<std::string, ParamSpec>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  const ParamSpec* find(const std::string& name) const {
    for (const auto& [n, s] : params_)
      if (n == name) return &s;
    return nullptr;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.first);
    return out;
  }

  bool operator==(const SearchSpace&) const = default;

  static void validate(const std::string& name, const ParamSpec& spec) {
    if (const auto* qu = std::get_if<QUniform>(&spec)) {
      if (!std::isfinite(qu->low) || !std::isfinite(qu->high) || !std::isfinite(qu->q))
        throw SchemaError("parameter '" + name + "': quniform bounds must be finite");
      if (qu->low > qu->high) throw SchemaError("parameter '" + name + "': quniform requires low <= high");
      if (!(qu->q > 0.0)) throw SchemaError("parameter '" + name + "': quniform requires q > 0");
      return;
    }
    const auto& ch = std::get<Choice>(spec);
    if (ch.values.empty()) throw SchemaError("parameter '" + name + "': choice list is empty");
    for (std::size_t i = 0; i < ch.values.size(); ++i)
      for (std::size_t j = i + 1; j < ch.values.size(); ++j)
        if (same_value(ch.values[i], ch.values[j]))
          throw SchemaError("parameter '" + name + "': duplicate choice " + to_string(ch.values[i]));
  }

private:
  std::vector<std::pair<std::string, ParamSpec>> params_;
};

inline SearchSpace parse_search_space(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("search space must be a map of name -> {_type, _value}");
  SearchSpace space;
  for (const auto& [name, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("_type") || !entry.contains("_value"))
      throw SchemaError("parameter '" + name + "': expected {\"_type\", \"_value\"}");
    if (!entry["_type"].is_string()) throw SchemaError("parameter '" + name + "': _type must be a string");
    const auto kind = entry["_type"].get<std::string>();
    const auto& value = entry["_value"];
    if (kind == "quniform") {
      if (!value.is_array() || value.size() != 3)
        throw SchemaError("parameter '" + name + "': quniform _value must be [low, high, q]");
      QUniform qu;
      std::array<double*, 3> slots{&qu.low, &qu.high, &qu.q};
      for (std::size_t i = 0; i < 3; ++i) {
        if (!value[i].is_number())
          throw SchemaError("parameter '" + name + "': quniform bounds must be numbers");
        *slots[i] = value[i].get<double>();
        qu.integer_token[i] = value[i].is_number_integer();
      }
      space.add(name, qu);
    } else if (kind == "choice") {
      if (!value.is_array()) throw SchemaError("parameter '" + name + "': choice _value must be a list");
      Choice ch;
      for (const auto& v : value) ch.values.push_back(value_from_json(v));
      space.add(name, std::move(ch));
    } else {
      throw UnsupportedParamKind(name, kind);
    }
  }
  return space;
}

inline SearchSpace parse_search_space(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw SchemaError(std::string("search space is not valid JSON: ") + e.what());
  }
  return parse_search_space(doc);
}

inline Json to_json(const SearchSpace& space) {
  Json doc = Json::object();
  for (const auto& [name, spec] : space.params()) {
    Json entry = Json::object();
    if (const auto* qu = std::get_if<QUniform>(&spec)) {
      entry["_type"] = "quniform";
      Json bounds = Json::array();
      const std::array<double, 3> vals{qu->low, qu->high, qu->q};
      for (std::size_t i = 0; i < 3; ++i) {
        if (qu->integer_token[i])
          bounds.push_back(static_cast<std::int64_t>(vals[i]));
        else
          bounds.push_back(vals[i]);
      }
      entry["_value"] = std::move(bounds);
    } else {
      entry["_type"] = "choice";
      Json vals = Json::array();
      for (const auto& v : std::get<Choice>(spec).values) vals.push_back(to_json(v));
      entry["_value"] = std::move(vals);
    }
    doc[name] = std::move(entry);
  }
  return doc;
}

inline std::string serialize_search_space(const SearchSpace& space) { return to_json(space).dump(); }

inline ParamValue sample_param(const ParamSpec& spec, Rng& rng) {
  if (const auto* qu = std::get_if<QUniform>(&spec)) return qu->quantize(rng.uniform(qu->low, qu->high));
  const auto& ch = std::get<Choice>(spec);
  return ch.values[rng.below(ch.values.size())];
}

inline ParamAssignment sample_assignment(const SearchSpace& space, Rng& rng) {
  ParamAssignment out;
  for (const auto& [name, spec] : space.params()) out[name] = sample_param(spec, rng);
  return out;
}

/// Trial settings: defaults overridden by the sampled assignment. Overridden
/// keys move to the end, after the untouched defaults, in sampled order.
inline ParamAssignment merge_params(const ParamAssignment& defaults, const ParamAssignment& sampled) {
  ParamAssignment out;
  for (const auto& [k, v] : defaults)
    if (sampled.find(k) == sampled.end()) out[k] = v;
  for (const auto& [k, v] : sampled) out[k] = v;
  return out;
}

/// The search space from the reference HPO configuration (Braille task).
inline SearchSpace reference_search_space() {
  return parse_search_space(std::string(R"({
    "n_rec": {"_type": "quniform", "_value": [11, 256, 1]},
    "threshold": {"_type": "quniform", "_value": [0.05, 1, 0.05]},
    "tau_mem": {"_type": "choice", "_value": [1e-3, 5e-3, 10e-3, 50e-3, 100e-3, 200e-3]},
    "tau_out": {"_type": "choice", "_value": [1e-3, 5e-3, 10e-3, 50e-3, 100e-3, 200e-3]},
    "delay_targets": {"_type": "choice", "_value": [1, 5, 10, 20, 50, 100]},
    "lr": {"_type": "choice", "_value": [0.0001, 0.00015, 0.0002, 0.0005, 0.001, 0.0015, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1]},
    "gamma": {"_type": "quniform", "_value": [0.1, 1, 0.1]},
    "reset_mechanism": {"_type": "choice", "_value": ["subtract", "zero"]}
  })"));
}

}  // namespace spikehpo
