#pragma once

#include <stdexcept>
#include <string>

namespace fatsim {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Arguments outside an operation's domain (label out of range, bad rate, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Partition spec that cannot cover the label space.
class FeasibilityError : public Error {
 public:
  using Error::Error;
};

// Cosine similarity requested against a zero-norm vector.
class DegenerateSimilarityError : public Error {
 public:
  using Error::Error;
};

// Non-finite values detected in aggregated parameters.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, int round) : Error(what), round_(round) {}
  int round() const noexcept { return round_; }

 private:
  int round_;
};

// Binary file decoding failures (IDX and checkpoint files).
class FormatError : public Error {
 public:
  enum class Kind { BadMagic, VersionMismatch, Truncated, CountMismatch, Io };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fatsim
