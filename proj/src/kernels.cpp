#include "biosed/kernels.hpp"

#include "biosed/common.hpp"

namespace biosed::kern {

namespace {

struct KernelTable {
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const float*,
                  const float*, float*, bool);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, const float*,
                  const float*, float*, bool);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const float*,
                  const float*, float*, bool);
  void (*matvec)(std::size_t, std::size_t, const float*, const float*, float*,
                 bool);
  void (*matvec_t_acc)(std::size_t, std::size_t, const float*, const float*,
                       float*);
  void (*axpy)(std::size_t, float, const float*, float*);
  void (*relu)(std::size_t, float*);
  void (*relu_backward)(std::size_t, const float*, float*);
  void (*adam_step)(std::size_t, float*, const float*, float*, float*, float,
                    float, float, float, float, float);
};

constexpr KernelTable kScalarTable = {
    ref::gemm_nn<float>,  ref::gemm_tn<float>,
    ref::gemm_nt<float>,  ref::matvec<float>,
    ref::matvec_t_acc<float>, ref::axpy<float>,
    ref::relu<float>,     ref::relu_backward<float>,
    ref::adam_step<float>,
};

#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2Table = {
    avx2::gemm_nn,  avx2::gemm_tn,      avx2::gemm_nt,
    avx2::matvec,   avx2::matvec_t_acc, avx2::axpy,
    avx2::relu,     avx2::relu_backward, avx2::adam_step,
};
#endif

Backend detect_backend() {
#if defined(__x86_64__) || defined(_M_X64)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
    return Backend::avx2;
  }
#endif
  return Backend::scalar;
}

Backend g_backend = detect_backend();
const KernelTable* g_table =
#if defined(__x86_64__) || defined(_M_X64)
    g_backend == Backend::avx2 ? &kAvx2Table : &kScalarTable;
#else
    &kScalarTable;
#endif

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "?";
}

Backend active_backend() { return g_backend; }

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void set_backend(Backend b) {
  if (b == Backend::avx2) {
#if defined(__x86_64__) || defined(_M_X64)
    if (!cpu_supports_avx2()) {
      throw ConfigError("kernel backend avx2 requested but CPU lacks AVX2");
    }
    g_backend = Backend::avx2;
    g_table = &kAvx2Table;
    return;
#else
    throw ConfigError("kernel backend avx2 unavailable on this architecture");
#endif
  }
  g_backend = Backend::scalar;
  g_table = &kScalarTable;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  g_table->gemm_nn(m, n, k, a, b, c, accumulate);
}
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  g_table->gemm_tn(m, n, k, a, b, c, accumulate);
}
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  g_table->gemm_nt(m, n, k, a, b, c, accumulate);
}
void matvec(std::size_t m, std::size_t k, const float* a, const float* x,
            float* y, bool accumulate) {
  g_table->matvec(m, k, a, x, y, accumulate);
}
void matvec_t_acc(std::size_t m, std::size_t k, const float* a,
                  const float* x, float* y) {
  g_table->matvec_t_acc(m, k, a, x, y);
}
void axpy(std::size_t n, float alpha, const float* x, float* y) {
  g_table->axpy(n, alpha, x, y);
}
void relu(std::size_t n, float* x) { g_table->relu(n, x); }
void relu_backward(std::size_t n, const float* activated, float* grad) {
  g_table->relu_backward(n, activated, grad);
}
void adam_step(std::size_t n, float* p, const float* g, float* m, float* v,
               float lr, float beta1, float beta2, float eps, float bc1,
               float bc2) {
  g_table->adam_step(n, p, g, m, v, lr, beta1, beta2, eps, bc1, bc2);
}

}  // namespace biosed::kern
