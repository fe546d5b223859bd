#pragma once

#include <stdexcept>
#include <string>

namespace hpm {

// Violated preconditions and invalid configuration. The CLI maps these to exit code 2.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

class IndexError : public ContractError {
 public:
  using ContractError::ContractError;
};

class ConfigError : public ContractError {
 public:
  using ContractError::ContractError;
};

class GeometryError : public ContractError {
 public:
  using ContractError::ContractError;
};

// File system and format failures. The CLI maps these to exit code 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : IoError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class CheckpointError : public IoError {
 public:
  enum class Kind { bad_magic, bad_version, truncated, malformed };
  CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace hpm
