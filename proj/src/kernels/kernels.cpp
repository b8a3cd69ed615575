// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>

#include "kernel_sets.hpp"

namespace numlens::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(NUMLENS_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

}  // namespace

const KernelSet& scalar() { return detail::kScalar; }

std::vector<const KernelSet*> available() {
  std::vector<const KernelSet*> out{&detail::kScalar};
#if defined(NUMLENS_HAVE_AVX2)
  if (cpu_has_avx2()) out.push_back(&detail::kAvx2);
#endif
#if defined(NUMLENS_HAVE_NEON)
  out.push_back(&detail::kNeon);
#endif
  return out;
}

const KernelSet* find(std::string_view name) {
  for (const KernelSet* k : available()) {
    if (k->name == name) return k;
  }
  return nullptr;
}

const KernelSet& active() {
  static const KernelSet* chosen = [] {
    if (const char* env = std::getenv("NUMLENS_KERNELS")) {
      if (const KernelSet* k = find(env)) return k;
    }
    return available().back();
  }();
  return *chosen;
}

}  // namespace numlens::kernels
