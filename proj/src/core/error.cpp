#include "error.hpp"

namespace kafshot {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::parameter: return "parameter error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::format: return "format error";
    case ErrorKind::sampling: return "sampling error";
    case ErrorKind::state: return "state error";
    case ErrorKind::metric: return "metric error";
    case ErrorKind::training: return "training error";
    case ErrorKind::config: return "config error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

}  // namespace kafshot
