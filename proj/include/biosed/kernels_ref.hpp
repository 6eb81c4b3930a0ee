#pragma once

// Scalar reference kernels for the hot inner loops. These are the ground
// truth the SIMD variants are equivalence-tested against, and the only
// implementation used for double (the gradient-check precision).

#include <cmath>
#include <cstddef>

namespace biosed::kern::ref {

/// c (m x n) = a (m x k) * b (k x n), all row-major. accumulate adds into c.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* cr = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) cr[j] = T(0);
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = a[i * k + kk];
      const T* br = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += aik * br[j];
    }
  }
}

/// c (m x n) = a^T * b with a stored (k x m), b (k x n).
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  }
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* ar = a + kk * m;
    const T* br = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T aki = ar[i];
      T* cr = c + i * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += aki * br[j];
    }
  }
}

/// c (m x n) = a * b^T with a (m x k), b stored (n x k).
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    T* cr = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T acc = T(0);
      for (std::size_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
      cr[j] = accumulate ? cr[j] + acc : acc;
    }
  }
}

/// y (m) = a (m x k) * x (k), optionally accumulating into y.
template <typename T>
void matvec(std::size_t m, std::size_t k, const T* a, const T* x, T* y,
            bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    T acc = T(0);
    for (std::size_t kk = 0; kk < k; ++kk) acc += ar[kk] * x[kk];
    y[i] = accumulate ? y[i] + acc : acc;
  }
}

/// y (k) += a^T * x with a (m x k), x (m). Always accumulates (its use is
/// summing transposed contributions into an existing gradient).
template <typename T>
void matvec_t_acc(std::size_t m, std::size_t k, const T* a, const T* x,
                  T* y) {
  for (std::size_t i = 0; i < m; ++i) {
    const T xi = x[i];
    const T* ar = a + i * k;
    for (std::size_t j = 0; j < k; ++j) y[j] += xi * ar[j];
  }
}

/// y += alpha * x.
template <typename T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu(std::size_t n, T* x) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < T(0)) x[i] = T(0);
  }
}

/// grad *= (activated > 0), with `activated` the post-ReLU values.
template <typename T>
void relu_backward(std::size_t n, const T* activated, T* grad) {
  for (std::size_t i = 0; i < n; ++i) {
    if (activated[i] <= T(0)) grad[i] = T(0);
  }
}

/// One Adam update. bc1/bc2 are the step-dependent bias corrections
/// 1 - beta1^t and 1 - beta2^t, precomputed by the caller so the kernel
/// stays elementwise.
template <typename T>
void adam_step(std::size_t n, T* p, const T* g, T* m, T* v, T lr, T beta1,
               T beta2, T eps, T bc1, T bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace biosed::kern::ref
