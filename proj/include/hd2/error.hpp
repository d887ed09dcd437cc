#pragma once

#include <stdexcept>
#include <string>

namespace hd2 {

// Error taxonomy shared by all modules. The CLI maps these onto exit codes:
// usage -> 1, input/IO/data -> 2, numeric -> 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor rank/extent disagreement.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Value outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain error: " + msg) {}
};

// Non-finite values or diverging optimization.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Bad configuration value or unknown key.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// Malformed payload contents (labels out of range, unknown raw ids, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

// Unrecognized container magic/version.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Payload shorter/longer than the header promises.
class LengthError : public Error {
 public:
  explicit LengthError(const std::string& msg) : Error("length error: " + msg) {}
};

// Filesystem failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Broken internal invariant; not recoverable by the caller.
class InternalError : public Error {
 public:
  explicit InternalError(const std::string& msg) : Error("internal error: " + msg) {}
};

}  // namespace hd2
