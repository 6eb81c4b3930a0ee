// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; nothing here runs unless the dispatcher verified CPU support.
//
// Reductions (gemm_nt, matvec) reassociate sums across lanes, so they match
// the scalar reference only to rounding; the elementwise kernels (axpy, relu,
// adam_step) and the rank-1-update gemms are bitwise identical because every
// output element sees the same sequence of IEEE operations.

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstddef>
#include <cstring>

#include "biosed/kernels.hpp"

namespace biosed::kern::avx2 {

namespace {

// Horizontal sum matching no particular scalar order; callers accept
// rounding-level divergence from the reference.
inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

constexpr std::size_t kTile = 1024;  // C-row tile kept hot in L1

// Rank-1 update of up to four C rows inside one column tile. mul+add (not
// FMA) keeps results bitwise equal to the scalar reference.
inline void rank1_rows(std::size_t nrows, std::size_t jn, std::size_t k,
                       std::size_t lda, const float* a, const float* b,
                       std::size_t ldb, float** crows) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float* br = b + kk * ldb;
    __m256 va[4];
    for (std::size_t r = 0; r < nrows; ++r) {
      va[r] = _mm256_broadcast_ss(a + r * lda + kk);
    }
    std::size_t j = 0;
    for (; j + 8 <= jn; j += 8) {
      const __m256 vb = _mm256_loadu_ps(br + j);
      for (std::size_t r = 0; r < nrows; ++r) {
        __m256 vc = _mm256_loadu_ps(crows[r] + j);
        vc = _mm256_add_ps(vc, _mm256_mul_ps(va[r], vb));
        _mm256_storeu_ps(crows[r] + j, vc);
      }
    }
    for (; j < jn; ++j) {
      for (std::size_t r = 0; r < nrows; ++r) {
        crows[r][j] += a[r * lda + kk] * br[j];
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  if (!accumulate) {
    std::memset(c, 0, m * n * sizeof(float));
  }
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t jn = std::min(kTile, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      float* rows[4] = {c + (i + 0) * n + j0, c + (i + 1) * n + j0,
                        c + (i + 2) * n + j0, c + (i + 3) * n + j0};
      rank1_rows(4, jn, k, k, a + i * k, b + j0, n, rows);
    }
    for (; i < m; ++i) {
      float* rows[1] = {c + i * n + j0};
      rank1_rows(1, jn, k, k, a + i * k, b + j0, n, rows);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  if (!accumulate) {
    std::memset(c, 0, m * n * sizeof(float));
  }
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t jn = std::min(kTile, n - j0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float* ar = a + kk * m;
      const float* br = b + kk * n + j0;
      for (std::size_t i = 0; i < m; ++i) {
        const __m256 va = _mm256_broadcast_ss(ar + i);
        float* cr = c + i * n + j0;
        std::size_t j = 0;
        for (; j + 8 <= jn; j += 8) {
          __m256 vc = _mm256_loadu_ps(cr + j);
          vc = _mm256_add_ps(vc, _mm256_mul_ps(va, _mm256_loadu_ps(br + j)));
          _mm256_storeu_ps(cr + j, vc);
        }
        for (; j < jn; ++j) cr[j] += ar[i] * br[j];
      }
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const float* a,
             const float* b, float* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a + i * k;
    float* cr = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const float* b0 = b + (j + 0) * k;
      const float* b1 = b + (j + 1) * k;
      const float* b2 = b + (j + 2) * k;
      const float* b3 = b + (j + 3) * k;
      __m256 acc0 = _mm256_setzero_ps();
      __m256 acc1 = _mm256_setzero_ps();
      __m256 acc2 = _mm256_setzero_ps();
      __m256 acc3 = _mm256_setzero_ps();
      std::size_t kk = 0;
      for (; kk + 8 <= k; kk += 8) {
        const __m256 va = _mm256_loadu_ps(ar + kk);
        acc0 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b0 + kk), acc0);
        acc1 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b1 + kk), acc1);
        acc2 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b2 + kk), acc2);
        acc3 = _mm256_fmadd_ps(va, _mm256_loadu_ps(b3 + kk), acc3);
      }
      float s0 = hsum256(acc0), s1 = hsum256(acc1);
      float s2 = hsum256(acc2), s3 = hsum256(acc3);
      for (; kk < k; ++kk) {
        s0 += ar[kk] * b0[kk];
        s1 += ar[kk] * b1[kk];
        s2 += ar[kk] * b2[kk];
        s3 += ar[kk] * b3[kk];
      }
      if (accumulate) {
        cr[j] += s0, cr[j + 1] += s1, cr[j + 2] += s2, cr[j + 3] += s3;
      } else {
        cr[j] = s0, cr[j + 1] = s1, cr[j + 2] = s2, cr[j + 3] = s3;
      }
    }
    for (; j < n; ++j) {
      const float* br = b + j * k;
      __m256 acc = _mm256_setzero_ps();
      std::size_t kk = 0;
      for (; kk + 8 <= k; kk += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(ar + kk),
                              _mm256_loadu_ps(br + kk), acc);
      }
      float s = hsum256(acc);
      for (; kk < k; ++kk) s += ar[kk] * br[kk];
      cr[j] = accumulate ? cr[j] + s : s;
    }
  }
}

void matvec(std::size_t m, std::size_t k, const float* a, const float* x,
            float* y, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a + i * k;
    __m256 acc = _mm256_setzero_ps();
    std::size_t kk = 0;
    for (; kk + 8 <= k; kk += 8) {
      acc = _mm256_fmadd_ps(_mm256_loadu_ps(ar + kk),
                            _mm256_loadu_ps(x + kk), acc);
    }
    float s = hsum256(acc);
    for (; kk < k; ++kk) s += ar[kk] * x[kk];
    y[i] = accumulate ? y[i] + s : s;
  }
}

void matvec_t_acc(std::size_t m, std::size_t k, const float* a,
                  const float* x, float* y) {
  for (std::size_t i = 0; i < m; ++i) {
    const __m256 vx = _mm256_broadcast_ss(x + i);
    const float* ar = a + i * k;
    std::size_t j = 0;
    for (; j + 8 <= k; j += 8) {
      __m256 vy = _mm256_loadu_ps(y + j);
      vy = _mm256_add_ps(vy, _mm256_mul_ps(vx, _mm256_loadu_ps(ar + j)));
      _mm256_storeu_ps(y + j, vy);
    }
    for (; j < k; ++j) y[j] += x[i] * ar[j];
  }
}

void axpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_add_ps(vy, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void relu(std::size_t n, float* x) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(x + i, _mm256_max_ps(zero, _mm256_loadu_ps(x + i)));
  }
  for (; i < n; ++i) {
    if (x[i] < 0.0f) x[i] = 0.0f;
  }
}

void relu_backward(std::size_t n, const float* activated, float* grad) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 va = _mm256_loadu_ps(activated + i);
    const __m256 keep = _mm256_cmp_ps(va, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(grad + i,
                     _mm256_and_ps(keep, _mm256_loadu_ps(grad + i)));
  }
  for (; i < n; ++i) {
    if (activated[i] <= 0.0f) grad[i] = 0.0f;
  }
}

void adam_step(std::size_t n, float* p, const float* g, float* m, float* v,
               float lr, float beta1, float beta2, float eps, float bc1,
               float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 vomb1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 vomb2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vbc1 = _mm256_set1_ps(bc1);
  const __m256 vbc2 = _mm256_set1_ps(bc2);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vg = _mm256_loadu_ps(g + i);
    __m256 vm = _mm256_loadu_ps(m + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    vm = _mm256_add_ps(_mm256_mul_ps(vb1, vm), _mm256_mul_ps(vomb1, vg));
    // ((1-b2)*g)*g, matching the scalar association exactly.
    vv = _mm256_add_ps(_mm256_mul_ps(vb2, vv),
                       _mm256_mul_ps(_mm256_mul_ps(vomb2, vg), vg));
    _mm256_storeu_ps(m + i, vm);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_div_ps(vm, vbc1);
    const __m256 vhat = _mm256_div_ps(vv, vbc2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
    __m256 vp = _mm256_loadu_ps(p + i);
    vp = _mm256_sub_ps(vp, _mm256_div_ps(_mm256_mul_ps(vlr, mhat), denom));
    _mm256_storeu_ps(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace biosed::kern::avx2

#endif  // x86_64
