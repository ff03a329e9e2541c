#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mperl {

// Shape/dimension mismatch between tensors or graph structures.
struct DimError : std::invalid_argument {
  explicit DimError(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse: a precondition the caller controls was violated.
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// Malformed input file; carries the 1-based line number.
struct ParseError : std::runtime_error {
  ParseError(std::size_t line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line(line) {}
  std::size_t line;
};

// Dataset ingestion failure (missing files, unknown labeled entity, ...).
struct IngestError : std::runtime_error {
  explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid run configuration; message names the offending key.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mperl
