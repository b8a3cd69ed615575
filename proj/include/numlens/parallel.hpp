// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace numlens {

/// Worker count: NUMLENS_WORKERS if set and positive, else hardware concurrency.
std::size_t default_worker_count();

/// Runs body(i) for i in [0, n) on up to `workers` threads (0 = default_worker_count()).
/// Callers write results into slots keyed by i, so output order never depends on
/// scheduling. If any call throws, the exception from the lowest failing index is
/// rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

}  // namespace numlens
