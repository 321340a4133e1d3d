#pragma once

#include <stdexcept>
#include <string>

namespace spikehpo {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed structured-text document (search space, config, metrics line).
struct SchemaError : Error {
  using Error::Error;
};

struct UnsupportedParamKind : SchemaError {
  explicit UnsupportedParamKind(const std::string& key, const std::string& kind)
      : SchemaError("parameter '" + key + "': unsupported kind '" + kind + "'"), key(key) {}
  std::string key;
};

struct ConfigError : Error {
  using Error::Error;
};

/// Violation of the engine/trial wire contract.
struct ProtocolError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

}  // namespace spikehpo
