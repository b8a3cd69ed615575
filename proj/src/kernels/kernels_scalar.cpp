// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include "kernel_sets.hpp"

namespace numlens::kernels::detail {
namespace {

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float acc = 0.0f;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void matvec_scalar(const float* w, const float* x, const float* bias, float* y, std::size_t rows,
                   std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float d = dot_scalar(w + r * cols, x, cols);
    y[r] = bias ? bias[r] + d : d;
  }
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelSet kScalar{"scalar", &dot_scalar, &matvec_scalar, &axpy_scalar};

}  // namespace numlens::kernels::detail
