// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "numlens/error.hpp"

namespace numlens {

void throw_error(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

StageError::StageError(std::string stage, std::string query_id, const std::string& what)
    : Error(ErrorKind::Runtime,
            "stage '" + stage + "'" + (query_id.empty() ? "" : " (query " + query_id + ")") + ": " + what),
      stage_(std::move(stage)),
      query_id_(std::move(query_id)) {}

}  // namespace numlens
