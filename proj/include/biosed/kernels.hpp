#pragma once

// Runtime-dispatched kernel front end. Float calls route to the widest
// instruction set the CPU supports (AVX2 today, scalar otherwise); double
// calls always use the scalar reference path. Equivalence between the two
// float paths is covered by tests/test_kernels.cpp.

#include <cstddef>

#include "biosed/kernels_ref.hpp"

namespace biosed::kern {

enum class Backend { scalar, avx2 };

const char* backend_name(Backend b);

/// Backend currently wired into the float dispatch table.
Backend active_backend();

/// Force a backend (tests, benchmarking). Throws ConfigError if the CPU
/// cannot run it.
void set_backend(Backend b);

bool cpu_supports_avx2();

// ---------------------------------------------------------------------------
// float: dispatched
// ---------------------------------------------------------------------------

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void matvec(std::size_t m, std::size_t k, const float* a, const float* x,
            float* y, bool accumulate);
void matvec_t_acc(std::size_t m, std::size_t k, const float* a,
                  const float* x, float* y);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void relu(std::size_t n, float* x);
void relu_backward(std::size_t n, const float* activated, float* grad);
void adam_step(std::size_t n, float* p, const float* g, float* m, float* v,
               float lr, float beta1, float beta2, float eps, float bc1,
               float bc2);

// ---------------------------------------------------------------------------
// double: scalar reference only
// ---------------------------------------------------------------------------

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, const double* b, double* c, bool acc) {
  ref::gemm_nn(m, n, k, a, b, c, acc);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, const double* b, double* c, bool acc) {
  ref::gemm_tn(m, n, k, a, b, c, acc);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, const double* b, double* c, bool acc) {
  ref::gemm_nt(m, n, k, a, b, c, acc);
}
inline void matvec(std::size_t m, std::size_t k, const double* a,
                   const double* x, double* y, bool acc) {
  ref::matvec(m, k, a, x, y, acc);
}
inline void matvec_t_acc(std::size_t m, std::size_t k, const double* a,
                         const double* x, double* y) {
  ref::matvec_t_acc(m, k, a, x, y);
}
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  ref::axpy(n, alpha, x, y);
}
inline void relu(std::size_t n, double* x) { ref::relu(n, x); }
inline void relu_backward(std::size_t n, const double* activated,
                          double* grad) {
  ref::relu_backward(n, activated, grad);
}
inline void adam_step(std::size_t n, double* p, const double* g, double* m,
                      double* v, double lr, double beta1, double beta2,
                      double eps, double bc1, double bc2) {
  ref::adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2);
}

#if defined(__x86_64__) || defined(_M_X64)
// Direct AVX2 entry points, exposed so the equivalence tests can pin the
// implementation regardless of the dispatch table state.
namespace avx2 {
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate);
void matvec(std::size_t m, std::size_t k, const float* a, const float* x,
            float* y, bool accumulate);
void matvec_t_acc(std::size_t m, std::size_t k, const float* a,
                  const float* x, float* y);
void axpy(std::size_t n, float alpha, const float* x, float* y);
void relu(std::size_t n, float* x);
void relu_backward(std::size_t n, const float* activated, float* grad);
void adam_step(std::size_t n, float* p, const float* g, float* m, float* v,
               float lr, float beta1, float beta2, float eps, float bc1,
               float bc2);
}  // namespace avx2
#endif

}  // namespace biosed::kern
