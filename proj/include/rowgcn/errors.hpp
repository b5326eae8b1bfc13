// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rowgcn {

/// Dimension disagreement between operands; message names both shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad argument value (label out of range, empty mask, P == 0, ...).
struct ValueError : std::runtime_error {
  explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Mismatched collective call across workers (length or op disagreement).
struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Group was aborted while a worker was blocked in a collective or wait.
struct ShutdownError : std::runtime_error {
  explicit ShutdownError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Input file could not be parsed; message carries the line number.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid or unknown configuration key/value.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rowgcn
