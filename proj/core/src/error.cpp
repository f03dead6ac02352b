#include "e2stn/error.hpp"

namespace e2stn {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape:
      return "shape_error";
    case ErrorKind::Config:
      return "config_error";
    case ErrorKind::Format:
      return "format_error";
    case ErrorKind::Protocol:
      return "protocol_error";
    case ErrorKind::Numeric:
      return "numeric_error";
    case ErrorKind::Io:
      return "io_error";
  }
  return "error";
}

}  // namespace e2stn
