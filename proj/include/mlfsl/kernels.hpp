// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>

namespace mlfsl::kernels {

// Dense double-precision inner loops. Every backend implements the same
// table; the scalar backend is the reference the SIMD variants are tested
// against.
struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*hadamard)(const double* a, const double* b, double* out, std::size_t n);
  // c[M x N] = a[M x K] * b[K x N], all row-major and contiguous.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               const double* b, double* c);
};

enum class Backend { kScalar, kAvx2 };

const KernelTable& scalar_kernels();

// nullptr when the binary was built without AVX2 support.
const KernelTable* avx2_kernels();

bool cpu_has_avx2();

// The table used by the numeric core. Chosen on first use: AVX2 when the CPU
// supports it, scalar otherwise. MLFSL_KERNELS=scalar forces the reference.
const KernelTable& active();

// Returns false if the requested backend is unavailable on this machine.
bool select(Backend backend);

}  // namespace mlfsl::kernels
