#pragma once

#include <stdexcept>
#include <string>

namespace baangp {

// Root of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
  using Error::Error;
};

// Input lies outside the domain an operation is defined on (e.g. an
// uncontracted point handed to the hash encoder).
class OutOfDomain : public Error {
public:
  using Error::Error;
};

class DegenerateConfiguration : public Error {
public:
  using Error::Error;
};

// I/O and format problems: missing manifests, unreadable images, bad checkpoints.
class DataError : public Error {
public:
  using Error::Error;
};

class TrainingDiverged : public Error {
public:
  using Error::Error;
};

} // namespace baangp
