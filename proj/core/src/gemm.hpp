#pragma once

#include <cstddef>

// Small row-major matrix kernels with a fixed summation order. Inner loops run
// over contiguous memory so they vectorize without reassociation.
namespace cytocon::detail {

// C(m x n) += A(m x k) * B(k x n); C may be wider than the inputs.
template <typename T, typename C>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, C* c) {
  for (std::size_t i = 0; i < m; ++i) {
    C* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const C av = a[i * k + p];
      if (av == C{}) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(k x n) += A(m x k)^T * B(m x n)
template <typename T, typename C>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, C* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const C av = a[i * k + p];
      if (av == C{}) continue;
      C* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc{};
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += acc;
    }
  }
}

}  // namespace cytocon::detail
