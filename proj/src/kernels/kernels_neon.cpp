// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <arm_neon.h>

#include "kernel_sets.hpp"

namespace numlens::kernels::detail {
namespace {

// Fixed reduction: (l0+l2) + (l1+l3).
inline float hsum(float32x4_t v) {
  const float32x2_t s = vadd_f32(vget_low_f32(v), vget_high_f32(v));
  return vget_lane_f32(s, 0) + vget_lane_f32(s, 1);
}

float dot_neon(const float* a, const float* b, std::size_t n) {
  std::size_t i = 0;
  float32x4_t acc0 = vdupq_n_f32(0.0f);
  float32x4_t acc1 = vdupq_n_f32(0.0f);
  float32x4_t acc2 = vdupq_n_f32(0.0f);
  float32x4_t acc3 = vdupq_n_f32(0.0f);
  for (; i + 16 <= n; i += 16) {
    acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
    acc1 = vfmaq_f32(acc1, vld1q_f32(a + i + 4), vld1q_f32(b + i + 4));
    acc2 = vfmaq_f32(acc2, vld1q_f32(a + i + 8), vld1q_f32(b + i + 8));
    acc3 = vfmaq_f32(acc3, vld1q_f32(a + i + 12), vld1q_f32(b + i + 12));
  }
  acc0 = vaddq_f32(vaddq_f32(acc0, acc1), vaddq_f32(acc2, acc3));
  for (; i + 4 <= n; i += 4) acc0 = vfmaq_f32(acc0, vld1q_f32(a + i), vld1q_f32(b + i));
  float acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void matvec_neon(const float* w, const float* x, const float* bias, float* y, std::size_t rows,
                 std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const float d = dot_neon(w + r * cols, x, cols);
    y[r] = bias ? bias[r] + d : d;
  }
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(va, vld1q_f32(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelSet kNeon{"neon", &dot_neon, &matvec_neon, &axpy_neon};

}  // namespace numlens::kernels::detail
