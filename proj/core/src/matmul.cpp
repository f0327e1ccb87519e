#include "matmul.hpp"

#include <vector>

#ifdef FINO_USE_OPENBLAS
#include <cblas.h>
#endif

namespace fino::detail {

#ifdef FINO_USE_OPENBLAS

namespace {

template <typename S>
void run(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::int64_t m, std::int64_t n,
         std::int64_t k, const S* a, std::int64_t lda, const S* b,
         std::int64_t ldb, S* c, bool acc) {
  if constexpr (sizeof(S) == sizeof(double)) {
    cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0,
                reinterpret_cast<const double*>(a), static_cast<int>(lda),
                reinterpret_cast<const double*>(b), static_cast<int>(ldb),
                acc ? 1.0 : 0.0, reinterpret_cast<double*>(c),
                static_cast<int>(n));
  } else {
    cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), 1.0f,
                reinterpret_cast<const float*>(a), static_cast<int>(lda),
                reinterpret_cast<const float*>(b), static_cast<int>(ldb),
                acc ? 1.0f : 0.0f, reinterpret_cast<float*>(c),
                static_cast<int>(n));
  }
}

}  // namespace

template <typename S>
void matmul_nn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  run(CblasNoTrans, CblasNoTrans, m, n, k, a, k, b, n, c, acc);
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  run(CblasNoTrans, CblasTrans, m, n, k, a, k, b, k, c, acc);
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  run(CblasTrans, CblasNoTrans, m, n, k, a, m, b, n, c, acc);
}

#else  // portable fallback

template <typename S>
void matmul_nn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  std::vector<double> row(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j)
      row[static_cast<size_t>(j)] = acc ? static_cast<double>(c[i * n + j]) : 0.0;
    for (std::int64_t p = 0; p < k; ++p) {
      double av = static_cast<double>(a[i * k + p]);
      const S* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j)
        row[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
    }
    for (std::int64_t j = 0; j < n; ++j)
      c[i * n + j] = static_cast<S>(row[static_cast<size_t>(j)]);
  }
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double s = acc ? static_cast<double>(c[i * n + j]) : 0.0;
      const S* arow = a + i * k;
      const S* brow = b + j * k;
      for (std::int64_t p = 0; p < k; ++p)
        s += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      c[i * n + j] = static_cast<S>(s);
    }
  }
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* c, std::int64_t m, std::int64_t k,
               std::int64_t n, bool acc) {
  std::vector<double> acc_c(static_cast<size_t>(m * n));
  for (std::int64_t i = 0; i < m * n; ++i)
    acc_c[static_cast<size_t>(i)] = acc ? static_cast<double>(c[i]) : 0.0;
  for (std::int64_t p = 0; p < k; ++p) {
    const S* arow = a + p * m;
    const S* brow = b + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      double av = static_cast<double>(arow[i]);
      for (std::int64_t j = 0; j < n; ++j)
        acc_c[static_cast<size_t>(i * n + j)] += av * static_cast<double>(brow[j]);
    }
  }
  for (std::int64_t i = 0; i < m * n; ++i)
    c[i] = static_cast<S>(acc_c[static_cast<size_t>(i)]);
}

#endif

template void matmul_nn<float>(const float*, const float*, float*,
                               std::int64_t, std::int64_t, std::int64_t, bool);
template void matmul_nn<double>(const double*, const double*, double*,
                                std::int64_t, std::int64_t, std::int64_t, bool);
template void matmul_nt<float>(const float*, const float*, float*,
                               std::int64_t, std::int64_t, std::int64_t, bool);
template void matmul_nt<double>(const double*, const double*, double*,
                                std::int64_t, std::int64_t, std::int64_t, bool);
template void matmul_tn<float>(const float*, const float*, float*,
                               std::int64_t, std::int64_t, std::int64_t, bool);
template void matmul_tn<double>(const double*, const double*, double*,
                                std::int64_t, std::int64_t, std::int64_t, bool);

}  // namespace fino::detail
