#ifndef FPSWITCH_ERROR_H_
#define FPSWITCH_ERROR_H_

#include <stdexcept>
#include <string>

namespace fpswitch {

// Out-of-range numeric parameter (filter coefficients, band width, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input that violates a domain precondition ("inconsistent mask",
// "insufficient context", "band too narrow", empty batches).
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed configuration. The message always names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& what)
      : std::runtime_error("config field '" + field + "': " + what),
        field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fpswitch

#endif  // FPSWITCH_ERROR_H_
