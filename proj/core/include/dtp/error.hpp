#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dtp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, bad argument).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced a non-finite value.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what, long iteration = -1)
      : Error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

enum class FormatErrorKind {
  kBadMagic,
  kUnsupportedVersion,
  kUnsupportedDtype,
  kTruncated,
  kDuplicateName,
  kMissingTensor,
  kShapeMismatch,
};

/// Malformed or incompatible .dtpw weight file / store.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : Error(what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace dtp
