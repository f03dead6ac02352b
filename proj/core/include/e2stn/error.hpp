#pragma once

#include <stdexcept>
#include <string>

namespace e2stn {

enum class ErrorKind {
  Shape,
  Config,
  Format,
  Protocol,
  Numeric,
  Io,
};

/// Machine-parsable category name, e.g. "shape_error".
const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define E2STN_DEFINE_ERROR(Name, Kind)                                 \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(Kind, message) {} \
  };

E2STN_DEFINE_ERROR(ShapeError, ErrorKind::Shape)
E2STN_DEFINE_ERROR(ConfigError, ErrorKind::Config)
E2STN_DEFINE_ERROR(FormatError, ErrorKind::Format)
E2STN_DEFINE_ERROR(ProtocolError, ErrorKind::Protocol)
E2STN_DEFINE_ERROR(NumericError, ErrorKind::Numeric)
E2STN_DEFINE_ERROR(IoError, ErrorKind::Io)

#undef E2STN_DEFINE_ERROR

}  // namespace e2stn
