#include "pstyle/log.hpp"

namespace pstyle {

LogLevel& log_level() {
  static LogLevel level = LogLevel::kInfo;
  return level;
}

}  // namespace pstyle
