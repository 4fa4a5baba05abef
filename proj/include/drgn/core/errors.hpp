#pragma once

#include <stdexcept>
#include <string>

namespace drgn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Raised when a low-light file has no normal-light counterpart (or vice versa).
class PairingError : public Error {
 public:
  explicit PairingError(std::string orphan)
      : Error("no counterpart for " + orphan), orphan_(std::move(orphan)) {}
  const std::string& orphan() const { return orphan_; }

 private:
  std::string orphan_;
};

class DecodeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class DistributionError : public Error {
 public:
  using Error::Error;
};

class EmptyReferenceError : public Error {
 public:
  using Error::Error;
};

class EmptyDatasetError : public Error {
 public:
  using Error::Error;
};

class GradientError : public Error {
 public:
  using Error::Error;
};

}  // namespace drgn
