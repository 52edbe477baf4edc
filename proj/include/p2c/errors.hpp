#pragma once

#include <stdexcept>
#include <string>

namespace p2c {

/// Base for every error raised by the library. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad or unreadable user input (schema failure, malformed files, bad flags).
class InputError : public Error {
 public:
  using Error::Error;
};

class MissingColumn : public InputError {
 public:
  using InputError::InputError;
};

class InsufficientProblems : public InputError {
 public:
  using InputError::InputError;
};

class EmptyCorpus : public InputError {
 public:
  using InputError::InputError;
};

class UnknownId : public Error {
 public:
  using Error::Error;
};

class OddDimension : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class SequenceTooLong : public Error {
 public:
  using Error::Error;
};

class AllPositionsMasked : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class LengthMismatch : public InputError {
 public:
  using InputError::InputError;
};

class CheckpointError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace p2c
