#pragma once

#include <stdexcept>
#include <string>

namespace bitnet {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// A group count or shard count does not divide the dimension it partitions.
class PartitionError : public Error {
 public:
  explicit PartitionError(const std::string& msg)
      : Error("partition error: " + msg) {}
};

// Caller broke a precondition (bad bit width, stale trace, frozen layer...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg)
      : Error("contract error: " + msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg)
      : Error("config error: " + msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Malformed or unsupported checkpoint bytes.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg)
      : Error("format error: " + msg) {}
};

class FitError : public Error {
 public:
  explicit FitError(const std::string& msg) : Error("fit error: " + msg) {}
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg)
      : Error("divergence: " + msg) {}
};

}  // namespace bitnet
