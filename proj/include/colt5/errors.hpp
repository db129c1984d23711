// Copyright 2026 The colt5 Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace colt5 {

/// Base class for all library errors. Every subtype carries a stable
/// machine-readable code used by the CLI for exit statuses.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Incompatible tensor shapes (names both shapes in the message).
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

/// Index outside the valid range of a gather/scatter/lookup.
class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error("index", what) {}
};

/// Non-finite values fed to an operation that requires finite input.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

/// Token id outside the configured vocabulary.
class VocabError : public Error {
 public:
  explicit VocabError(const std::string& what) : Error("vocab", what) {}
};

/// Corrupt or version-mismatched binary file.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// Malformed configuration (bad JSON, unknown key, wrong type).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

/// Referenced file or directory does not exist / cannot be opened.
class PathError : public Error {
 public:
  explicit PathError(const std::string& what) : Error("path", what) {}
};

}  // namespace colt5
