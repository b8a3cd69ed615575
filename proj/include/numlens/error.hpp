// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace numlens {

using TokenId = std::int32_t;

/// Coarse failure class. The CLI maps these onto its exit codes.
enum class ErrorKind {
  Config,   // unreadable or invalid configuration / input files
  Load,     // model, weights or vocabulary failed to load
  Runtime,  // a pipeline stage failed on valid inputs
  Input,    // a caller broke an operation's precondition
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void throw_error(ErrorKind kind, const std::string& message);

/// Stage failure carrying the stage name and, when known, the query that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, std::string query_id, const std::string& what);
  const std::string& stage() const noexcept { return stage_; }
  const std::string& query_id() const noexcept { return query_id_; }

 private:
  std::string stage_;
  std::string query_id_;
};

}  // namespace numlens
