// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string_view>

#include "mlfsl/kernels.hpp"

namespace mlfsl::kernels {
namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("MLFSL_KERNELS")) {
    if (std::string_view(env) == "scalar") return &scalar_kernels();
  }
  if (cpu_has_avx2() && avx2_kernels() != nullptr) return avx2_kernels();
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{pick_default()};
  return table;
}

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Backend backend) {
  switch (backend) {
    case Backend::kScalar:
      current().store(&scalar_kernels(), std::memory_order_release);
      return true;
    case Backend::kAvx2:
      if (!cpu_has_avx2() || avx2_kernels() == nullptr) return false;
      current().store(avx2_kernels(), std::memory_order_release);
      return true;
  }
  return false;
}

}  // namespace mlfsl::kernels
