#pragma once

#include <cstdint>

namespace fino::detail {

// Row-major GEMM wrappers; `acc` adds into C instead of overwriting.
// Accumulation width and order are backend-specific (native BLAS kernels in
// the storage type, 64-bit in the portable fallback); for a fixed build and
// thread count the result is bitwise reproducible run to run.
//   nn: C[M,N] = A[M,K] * B[K,N]
//   nt: C[M,N] = A[M,K] * B[N,K]^T
//   tn: C[M,N] = A[K,M]^T * B[K,N]
template <typename S>
void matmul_nn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc);
template <typename S>
void matmul_nt(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc);
template <typename S>
void matmul_tn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc);

}  // namespace fino::detail
