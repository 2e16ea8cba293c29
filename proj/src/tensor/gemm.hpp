#pragma once

#include <algorithm>

#include "aem/tensor.hpp"

namespace aem::detail {

template <typename T>
inline T dot(const T* a, const T* b, Index n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  Index i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// C[M,N] (+)= op(A) op(B), row-major and contiguous. op(A) is [M,K]: A is stored
// [M,K], or [K,M] when trans_a. op(B) is [K,N]: B is stored [K,N], or [N,K] when trans_b.
// Loop orders are fixed so results are reproducible bit for bit.
template <typename T>
void gemm(bool trans_a, bool trans_b, Index M, Index N, Index K, const T* A, const T* B, T* C, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, T(0));
  if (!trans_a && !trans_b) {
    for (Index i = 0; i < M; ++i) {
      T* c = C + i * N;
      const T* a = A + i * K;
      for (Index p = 0; p < K; ++p) {
        const T av = a[p];
        const T* b = B + p * N;
        for (Index j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  } else if (!trans_a && trans_b) {
    for (Index i = 0; i < M; ++i) {
      const T* a = A + i * K;
      T* c = C + i * N;
      for (Index j = 0; j < N; ++j) c[j] += dot(a, B + j * K, K);
    }
  } else if (trans_a && !trans_b) {
    for (Index p = 0; p < K; ++p) {
      const T* a = A + p * M;
      const T* b = B + p * N;
      for (Index i = 0; i < M; ++i) {
        const T av = a[i];
        T* c = C + i * N;
        for (Index j = 0; j < N; ++j) c[j] += av * b[j];
      }
    }
  } else {
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j < N; ++j) {
        T s = 0;
        for (Index p = 0; p < K; ++p) s += A[p * M + i] * B[j * K + p];
        C[i * N + j] += s;
      }
  }
}

}  // namespace aem::detail
