// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace numlens::kernels {

/// One implementation of the float32 inner loops used by the forward pass.
///
/// Every kernel set is deterministic: the accumulation order is fixed for a given
/// length, so repeated calls give bit-identical results. The scalar set
/// accumulates strictly in index order and is the reference; vector sets
/// accumulate in fixed lane-strided order and agree with it to rounding.
struct KernelSet {
  std::string_view name;
  /// sum_i a[i] * b[i]
  float (*dot)(const float* a, const float* b, std::size_t n);
  /// y[r] = bias[r] + dot(w + r * cols, x, cols) for r < rows; bias may be null.
  /// Each row's value is bit-identical to calling dot on that row.
  void (*matvec)(const float* w, const float* x, const float* bias, float* y, std::size_t rows, std::size_t cols);
  /// y[i] += alpha * x[i]
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);
};

const KernelSet& scalar();

/// Sets compiled into this build and supported by the running CPU, scalar first.
std::vector<const KernelSet*> available();

/// Looks a set up by name ("scalar", "avx2", "neon"); null if unavailable here.
const KernelSet* find(std::string_view name);

/// Process-wide default, chosen once: NUMLENS_KERNELS=<name> if set and
/// available, otherwise the widest available vector set, otherwise scalar.
const KernelSet& active();

inline float dot(const KernelSet& k, std::span<const float> a, std::span<const float> b) {
  return k.dot(a.data(), b.data(), a.size());
}

}  // namespace numlens::kernels
