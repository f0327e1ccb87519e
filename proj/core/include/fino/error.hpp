#pragma once

#include <stdexcept>
#include <string>

namespace fino {

// Error taxonomy mapped onto CLI exit codes: usage/contract problems exit 1,
// unreadable or malformed data exits 2, numerical failures exit 3.
enum class ErrorKind {
  Usage,     // bad flags, bad config keys
  Data,      // missing files, malformed episodes, unsupported formats
  Numeric,   // NaN/Inf surfaced from a computation
  Contract,  // shape or parameter misuse at an API boundary
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}
[[noreturn]] inline void raise_usage(const std::string& msg) {
  raise(ErrorKind::Usage, msg);
}
[[noreturn]] inline void raise_data(const std::string& msg) {
  raise(ErrorKind::Data, msg);
}
[[noreturn]] inline void raise_numeric(const std::string& msg) {
  raise(ErrorKind::Numeric, msg);
}
[[noreturn]] inline void raise_contract(const std::string& msg) {
  raise(ErrorKind::Contract, msg);
}

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::Contract:
      return 1;
    case ErrorKind::Data:
      return 2;
    case ErrorKind::Numeric:
      return 3;
  }
  return 1;
}

}  // namespace fino
