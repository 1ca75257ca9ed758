#include "camid/error.hpp"

namespace camid {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::TooSmall: return "TooSmall";
    case Errc::InvalidParam: return "InvalidParam";
    case Errc::NotAJpeg: return "NotAJpeg";
    case Errc::MissingTables: return "MissingTables";
    case Errc::UnsupportedJpeg: return "UnsupportedJpeg";
    case Errc::CorruptJpeg: return "CorruptJpeg";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::IoError: return "IoError";
    case Errc::FormatError: return "FormatError";
    case Errc::InsufficientData: return "InsufficientData";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace camid
