// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "numlens/kernels.hpp"

namespace numlens::kernels::detail {

extern const KernelSet kScalar;
#if defined(NUMLENS_HAVE_AVX2)
extern const KernelSet kAvx2;
#endif
#if defined(NUMLENS_HAVE_NEON)
extern const KernelSet kNeon;
#endif

}  // namespace numlens::kernels::detail
