#pragma once

#include <stdexcept>
#include <string>

namespace deltal {

// Base for every error the library reports. Callers that only care about
// "something in the lab failed" catch this; the CLI maps subclasses to exit
// codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EnumerationTooLarge : public Error {
 public:
  using Error::Error;
};

class GroupTooSmall : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidLength : public Error {
 public:
  using Error::Error;
};

class DegenerateDesign : public Error {
 public:
  using Error::Error;
};

class ConfigInvalid : public Error {
 public:
  ConfigInvalid(int line, std::string field, const std::string& message)
      : Error(format(line, field, message)), line_(line), field_(std::move(field)) {}

  // 0 when the problem is not tied to a particular line.
  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(int line, const std::string& field, const std::string& message) {
    std::string out = "config invalid";
    if (line > 0) out += " (line " + std::to_string(line) + ")";
    if (!field.empty()) out += " [" + field + "]";
    return out + ": " + message;
  }

  int line_;
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace deltal
