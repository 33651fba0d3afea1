#pragma once

#include <stdexcept>
#include <string>

namespace circuit_lab {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad token, empty batch, ...).
class InvalidInput : public Error {
public:
  using Error::Error;
};

/// A requested enumeration or sample exceeds what the space can provide.
class CapacityError : public Error {
public:
  using Error::Error;
};

/// An experiment configuration is inconsistent or unparsable.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// A text file does not match its documented format.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// A checkpoint was written by an unsupported format version.
class IncompatibleVersion : public Error {
public:
  using Error::Error;
};

/// A checkpoint is structurally incomplete (missing tensor, bad shape).
class CorruptionError : public Error {
public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  DivergenceError(long step, double loss)
      : Error("non-finite loss " + std::to_string(loss) + " at step " + std::to_string(step)),
        step_(step),
        loss_(loss) {}

  long step() const noexcept { return step_; }
  double loss() const noexcept { return loss_; }

private:
  long step_;
  double loss_;
};

}  // namespace circuit_lab
