// Exception types shared across the library. Each maps to one failure
// condition named in the module contracts; catch sites switch on type,
// not on message text.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hear {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public Error {
public:
  ParseError(const std::string& msg, std::size_t line = 0)
      : Error(line ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

class DuplicateName : public Error {
public:
  explicit DuplicateName(const std::string& name)
      : Error("duplicate electrode name: " + name), name_(name) {}
  DuplicateName(const std::string& name, std::size_t line)
      : Error("duplicate electrode name: " + name + " (line " +
              std::to_string(line) + ")"),
        name_(name) {}
  const std::string& name() const { return name_; }

private:
  std::string name_;
};

class EmptyLayout : public Error {
public:
  explicit EmptyLayout(const std::string& msg) : Error(msg) {}
};

class InvalidRate : public Error {
public:
  explicit InvalidRate(const std::string& msg) : Error(msg) {}
};

class InvalidBand : public Error {
public:
  explicit InvalidBand(const std::string& msg) : Error(msg) {}
};

class SignalTooShort : public Error {
public:
  explicit SignalTooShort(const std::string& msg) : Error(msg) {}
};

class ShapeMismatch : public Error {
public:
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

class NonFiniteInput : public Error {
public:
  explicit NonFiniteInput(const std::string& msg) : Error(msg) {}
};

class TimeOverflow : public Error {
public:
  explicit TimeOverflow(const std::string& msg) : Error(msg) {}
};

class EmptyBatch : public Error {
public:
  explicit EmptyBatch(const std::string& msg) : Error(msg) {}
};

class IndexOutOfRange : public Error {
public:
  explicit IndexOutOfRange(const std::string& msg) : Error(msg) {}
};

class NonFiniteLoss : public Error {
public:
  explicit NonFiniteLoss(const std::string& msg) : Error(msg) {}
};

class ManifestError : public Error {
public:
  explicit ManifestError(const std::string& msg) : Error(msg) {}
};

class LoadError : public Error {
public:
  LoadError(std::size_t batch_index, const std::string& msg)
      : Error("batch " + std::to_string(batch_index) + ": " + msg),
        batch_index_(batch_index) {}
  std::size_t batch_index() const { return batch_index_; }

private:
  std::size_t batch_index_;
};

class DesyncDetected : public Error {
public:
  explicit DesyncDetected(const std::string& msg) : Error(msg) {}
};

class TooFewSamples : public Error {
public:
  explicit TooFewSamples(const std::string& msg) : Error(msg) {}
};

class EmptyMatrix : public Error {
public:
  explicit EmptyMatrix(const std::string& msg) : Error(msg) {}
};

class UnresolvableLayout : public Error {
public:
  explicit UnresolvableLayout(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace hear
