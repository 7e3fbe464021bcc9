#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace pstyle {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2 };

LogLevel& log_level();

/// Diagnostics go to standard error; machine-readable output never does.
template <typename... Args>
void log_info(const Args&... args) {
  if (log_level() < LogLevel::kInfo) return;
  std::ostringstream os;
  (os << ... << args);
  std::cerr << os.str() << '\n';
}

template <typename... Args>
void log_warn(const Args&... args) {
  if (log_level() < LogLevel::kWarn) return;
  std::ostringstream os;
  os << "warning: ";
  (os << ... << args);
  std::cerr << os.str() << '\n';
}

/// Uniform index in [0, n) straight from the engine, so results do not
/// depend on the standard library's distribution implementations.
template <typename Rng>
std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

template <typename Rng>
double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

template <typename Rng, typename Vec>
void fisher_yates(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

}  // namespace pstyle
