#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace sslf {

enum class ErrorKind {
  Shape,       // tensor shape / dimension mismatch
  Domain,      // numeric domain violation (log of negative, label out of range, ...)
  Config,      // invalid configuration
  Io,          // file system / parsing failures
  Format,      // malformed binary payloads (checkpoints, images)
  Divergence,  // training produced non-finite values
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Divergence: return "divergence";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class A, class... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
[[noreturn]] void fail(ErrorKind kind, const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw Error(kind, os.str());
}

template <class... Args>
void require(bool cond, ErrorKind kind, const Args&... args) {
  if (!cond) fail(kind, args...);
}

}  // namespace sslf
