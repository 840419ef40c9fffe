#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace amr {

// Error taxonomy shared by all modules. The CLI maps these onto stable
// process exit codes (config/usage -> 2, I/O & format -> 3, numerics -> 4).
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& m) : std::runtime_error(m) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& m) : std::runtime_error(m) {}
};

inline std::string strfmt(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[1024];
  vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return std::string(buf);
}

namespace debug {
// When non-empty, the matching op multiplies its input gradient by a wrong
// factor. Exists so the gradient checker can prove it detects broken
// backward passes. Never set outside gradcheck negative controls.
inline std::string& corrupt_backward() {
  static std::string tag;
  return tag;
}
inline bool corrupted(const char* name) { return corrupt_backward() == name; }
}  // namespace debug

}  // namespace amr
