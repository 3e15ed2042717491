// Copyright 2026 The CARMEN Emulator Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace carmen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (format mismatch, bad length, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// A CORDIC operand lies outside the convergence domain of the requested mode.
// Raised when a caller skipped the required range reduction.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite or otherwise unusable numeric data reached the quantizer.
class InvalidModelData : public Error {
 public:
  using Error::Error;
};

// A data or report file could not be read, parsed or written.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace carmen
