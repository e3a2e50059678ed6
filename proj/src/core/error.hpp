#pragma once

#include <stdexcept>
#include <string>

namespace medssl {

enum class ErrorKind {
  InvalidInput,
  Shape,
  Config,
  Numerical,
  Manifest,
  Label,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Base of every exception thrown by the core library. The kind maps 1:1
/// onto the C API status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MEDSSL_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MEDSSL_DEFINE_ERROR(InvalidInput, InvalidInput)
MEDSSL_DEFINE_ERROR(ShapeError, Shape)
MEDSSL_DEFINE_ERROR(ConfigError, Config)
MEDSSL_DEFINE_ERROR(NumericalError, Numerical)
MEDSSL_DEFINE_ERROR(LabelError, Label)
MEDSSL_DEFINE_ERROR(IoError, Io)

#undef MEDSSL_DEFINE_ERROR

class ManifestError : public Error {
 public:
  ManifestError(int line, const std::string& what)
      : Error(ErrorKind::Manifest,
              line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace medssl
