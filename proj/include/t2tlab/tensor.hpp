#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "t2tlab/parallel.hpp"
#include "t2tlab/util.hpp"

namespace t2t {

// Dense row-major 2-D tensor. 1-D parameters (norm gains) use rows == 1.
template <class T>
struct Tensor {
  int rows = 0, cols = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), T(0)) {}

  T* row(int r) { return data.data() + size_t(r) * size_t(cols); }
  const T* row(int r) const { return data.data() + size_t(r) * size_t(cols); }
  T& at(int r, int c) { return data[size_t(r) * size_t(cols) + size_t(c)]; }
  const T& at(int r, int c) const { return data[size_t(r) * size_t(cols) + size_t(c)]; }
  size_t size() const { return data.size(); }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(rows, cols);
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

// GEMM kernels. Single-threaded with a fixed accumulation order (ascending
// k for every output element), so results are bitwise reproducible and the
// same across the tiled fast path and the scalar remainders.

namespace detail {

// Register-blocked saxpy GEMM body: two A rows share each B row, and the
// 32-wide C tiles stay in registers across the whole k loop.
template <class T>
void gemm_body(const T* __restrict__ A, const T* __restrict__ B, T* __restrict__ C, int M, int K,
               int N) {
  int i = 0;
  for (; i + 2 <= M; i += 2) {
    const T* a0 = A + size_t(i) * size_t(K);
    const T* a1 = a0 + K;
    T* c0 = C + size_t(i) * size_t(N);
    T* c1 = c0 + N;
    int j0 = 0;
    for (; j0 + 32 <= N; j0 += 32) {
      T acc0[32], acc1[32];
      for (int l = 0; l < 32; ++l) {
        acc0[l] = c0[j0 + l];
        acc1[l] = c1[j0 + l];
      }
      for (int k = 0; k < K; ++k) {
        const T ak0 = a0[k], ak1 = a1[k];
        const T* bk = B + size_t(k) * size_t(N) + j0;
        for (int l = 0; l < 32; ++l) {
          acc0[l] += ak0 * bk[l];
          acc1[l] += ak1 * bk[l];
        }
      }
      for (int l = 0; l < 32; ++l) {
        c0[j0 + l] = acc0[l];
        c1[j0 + l] = acc1[l];
      }
    }
    for (; j0 < N; ++j0) {
      T s0 = c0[j0], s1 = c1[j0];
      for (int k = 0; k < K; ++k) {
        s0 += a0[k] * B[size_t(k) * size_t(N) + j0];
        s1 += a1[k] * B[size_t(k) * size_t(N) + j0];
      }
      c0[j0] = s0;
      c1[j0] = s1;
    }
  }
  for (; i < M; ++i) {
    const T* a = A + size_t(i) * size_t(K);
    T* c = C + size_t(i) * size_t(N);
    for (int j0 = 0; j0 < N; ++j0) {
      T s = c[j0];
      for (int k = 0; k < K; ++k) s += a[k] * B[size_t(k) * size_t(N) + j0];
      c[j0] = s;
    }
  }
}

template <class T>
std::vector<T>& gemm_scratch() {
  static thread_local std::vector<T> scratch;
  return scratch;
}

}  // namespace detail

namespace detail {

// Output rows are independent, so the row range can be split across the
// worker pool; per-element accumulation order is unchanged by the split.
template <class T>
void gemm_rows(const T* A, const T* B, T* C, int M, int K, int N) {
  const long long work = (long long)M * K * N;
  if (work < 2'000'000 || M < 2) {
    gemm_body(A, B, C, M, K, N);
    return;
  }
  WorkerPool::instance().run(M, 2, [&](long long lo, long long hi) {
    gemm_body(A + lo * K, B, C + lo * N, int(hi - lo), K, N);
  });
}

}  // namespace detail

// C (+)= A * B ; A[M,K], B[K,N], C[M,N]
template <class T>
void gemm_nn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C, bool accumulate) {
  check(A.cols == B.rows && A.rows == C.rows && B.cols == C.cols, "gemm_nn shape mismatch");
  if (!accumulate) C.zero();
  detail::gemm_rows(A.data.data(), B.data.data(), C.data.data(), A.rows, A.cols, B.cols);
}

// C (+)= A * B^T ; A[M,K], B[N,K], C[M,N]
//
// Tall A routes through an explicit transpose of B and the blocked kernel;
// the transpose is amortized over M rows. Single rows (decode steps) use a
// strictly sequential dot, which visits k in the same order, so both paths
// agree bit for bit.
template <class T>
void gemm_nt(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C, bool accumulate) {
  check(A.cols == B.cols && A.rows == C.rows && B.rows == C.cols, "gemm_nt shape mismatch");
  const int M = A.rows, K = A.cols, N = B.rows;
  if (!accumulate) C.zero();
  if (M >= 8) {
    auto& scratch = detail::gemm_scratch<T>();
    scratch.resize(size_t(K) * size_t(N));
    for (int j = 0; j < N; ++j) {
      const T* __restrict__ b = B.row(j);
      for (int k = 0; k < K; ++k) scratch[size_t(k) * size_t(N) + size_t(j)] = b[k];
    }
    detail::gemm_rows(A.data.data(), scratch.data(), C.data.data(), M, K, N);
    return;
  }
  for (int i = 0; i < M; ++i) {
    const T* __restrict__ a = A.row(i);
    T* __restrict__ c = C.row(i);
    for (int j = 0; j < N; ++j) {
      const T* __restrict__ b = B.row(j);
      T acc = c[j];
      for (int k = 0; k < K; ++k) acc += a[k] * b[k];
      c[j] = acc;
    }
  }
}

// C (+)= A^T * B ; A[M,K], B[M,N], C[K,N]
template <class T>
void gemm_tn(const Tensor<T>& A, const Tensor<T>& B, Tensor<T>& C, bool accumulate) {
  check(A.rows == B.rows && A.cols == C.rows && B.cols == C.cols, "gemm_tn shape mismatch");
  const int M = A.rows, K = A.cols, N = B.cols;
  if (!accumulate) C.zero();
  auto& scratch = detail::gemm_scratch<T>();
  scratch.resize(size_t(M) * size_t(K));
  for (int m = 0; m < M; ++m) {
    const T* __restrict__ a = A.row(m);
    for (int k = 0; k < K; ++k) scratch[size_t(k) * size_t(M) + size_t(m)] = a[k];
  }
  detail::gemm_rows(scratch.data(), B.data.data(), C.data.data(), K, M, N);
}

// 16 independent lanes so the compiler can emit wide FMA; head dims and
// d_model are multiples of 16 in practice, scalar tail otherwise.
template <class T>
T dot_span(const T* __restrict__ a, const T* __restrict__ b, int n) {
  T lanes[16] = {};
  int k = 0;
  for (; k + 16 <= n; k += 16)
    for (int l = 0; l < 16; ++l) lanes[l] += a[k + l] * b[k + l];
  T acc = 0;
  for (int l = 0; l < 16; ++l) acc += lanes[l];
  for (; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

// exp for the float32 softmax path (Cephes-style range reduction plus a
// degree-6 polynomial, ~1e-7 relative error). It inlines and vectorizes,
// unlike libm expf. The double path keeps std::exp: gradient verification
// runs there and stays bit-exact against the libm baseline.
inline float fast_exp_f32(float x) {
  // branchless: arguments below the underflow cutoff come out as exact 0,
  // so masked attention entries keep their p == 0 gating
  float zero_mask = x < -87.0f ? 0.0f : 1.0f;
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  float z = std::floor(1.44269504088896341f * x + 0.5f);
  x -= z * 0.693359375f;
  x -= z * -2.12194440e-4f;
  float y = 1.9875691500e-4f;
  y = y * x + 1.3981999507e-3f;
  y = y * x + 8.3334519073e-3f;
  y = y * x + 4.1665795894e-2f;
  y = y * x + 1.6666665459e-1f;
  y = y * x + 5.0000001201e-1f;
  y = y * x * x + x + 1.0f;
  return zero_mask * y * std::bit_cast<float>((int(z) + 127) << 23);
}

inline float softmax_exp(float x) { return fast_exp_f32(x); }
inline double softmax_exp(double x) { return std::exp(x); }

template <class T>
void axpy_span(T alpha, const T* __restrict__ x, T* __restrict__ y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace t2t
