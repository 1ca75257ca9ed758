#pragma once

#include <stdexcept>
#include <string>

namespace camid {

enum class Errc {
  OutOfBounds,
  TooSmall,
  InvalidParam,
  NotAJpeg,
  MissingTables,
  UnsupportedJpeg,
  CorruptJpeg,
  ShapeMismatch,
  NonFiniteGradient,
  IoError,
  FormatError,
  InsufficientData,
  EmptyInput,
  LengthMismatch,
  ConfigError,
};

const char* to_string(Errc code) noexcept;

// All library failures are reported through this one exception type; callers
// that need to branch on the failure inspect code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace camid
