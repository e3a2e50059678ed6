#include "error.hpp"

namespace medssl {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::Shape: return "ShapeError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::Numerical: return "NumericalError";
    case ErrorKind::Manifest: return "ManifestError";
    case ErrorKind::Label: return "LabelError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

}  // namespace medssl
