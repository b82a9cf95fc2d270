// AVX2 kernels. Elementwise ops and gemm use mul+add in the same per-element
// order as the scalar reference, so their results are bit-identical to it.
// Reductions use lane partials (different summation order); vexp/silu use a
// polynomial exp instead of libm. Equivalence tests cover both classes.

#include <cmath>
#include <cstddef>
#include <cstdint>

#include "kernels_impl.hpp"

#if defined(PROGDIT_HAVE_AVX2)

#include <immintrin.h>

namespace progdit::kernels::avx2 {

namespace {

float hsum(__m256 v);
double hsum(__m256d v);

// ---- f32 ----

void add_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_f32(float c, const float* x, float* y, size_t n) {
  const __m256 vc = _mm256_set1_ps(c);
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(vc, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = c * x[i];
}

void axpy_f32(float c, const float* x, float* y, size_t n) {
  const __m256 vc = _mm256_set1_ps(c);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_add_ps(vy, _mm256_mul_ps(vc, _mm256_loadu_ps(x + i)));
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + c * x[i];
}

void gemm_f32(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  size_t i = 0;
  // 4-row register blocking: one pass over B per four C rows
  for (; i + 4 <= m; i += 4) {
    const float* ar0 = a + i * k;
    const float* ar1 = ar0 + k;
    const float* ar2 = ar1 + k;
    const float* ar3 = ar2 + k;
    float* cr0 = c + i * n;
    float* cr1 = cr0 + n;
    float* cr2 = cr1 + n;
    float* cr3 = cr2 + n;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 a0 = _mm256_loadu_ps(cr0 + j);
      __m256 a1 = _mm256_loadu_ps(cr1 + j);
      __m256 a2 = _mm256_loadu_ps(cr2 + j);
      __m256 a3 = _mm256_loadu_ps(cr3 + j);
      for (size_t kk = 0; kk < k; ++kk) {
        const __m256 vb = _mm256_loadu_ps(b + kk * n + j);
        a0 = _mm256_add_ps(a0, _mm256_mul_ps(_mm256_set1_ps(ar0[kk]), vb));
        a1 = _mm256_add_ps(a1, _mm256_mul_ps(_mm256_set1_ps(ar1[kk]), vb));
        a2 = _mm256_add_ps(a2, _mm256_mul_ps(_mm256_set1_ps(ar2[kk]), vb));
        a3 = _mm256_add_ps(a3, _mm256_mul_ps(_mm256_set1_ps(ar3[kk]), vb));
      }
      _mm256_storeu_ps(cr0 + j, a0);
      _mm256_storeu_ps(cr1 + j, a1);
      _mm256_storeu_ps(cr2 + j, a2);
      _mm256_storeu_ps(cr3 + j, a3);
    }
    for (; j < n; ++j) {
      float s0 = cr0[j], s1 = cr1[j], s2 = cr2[j], s3 = cr3[j];
      for (size_t kk = 0; kk < k; ++kk) {
        const float bv = b[kk * n + j];
        s0 = s0 + ar0[kk] * bv;
        s1 = s1 + ar1[kk] * bv;
        s2 = s2 + ar2[kk] * bv;
        s3 = s3 + ar3[kk] * bv;
      }
      cr0[j] = s0;
      cr1[j] = s1;
      cr2[j] = s2;
      cr3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 acc = _mm256_loadu_ps(crow + j);
      for (size_t kk = 0; kk < k; ++kk) {
        const __m256 va = _mm256_set1_ps(arow[kk]);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(va, _mm256_loadu_ps(b + kk * n + j)));
      }
      _mm256_storeu_ps(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = crow[j];
      for (size_t kk = 0; kk < k; ++kk) acc = acc + arow[kk] * b[kk * n + j];
      crow[j] = acc;
    }
  }
}

void gemm_tn_f32(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 acc = _mm256_loadu_ps(crow + j);
      for (size_t p = 0; p < k; ++p) {
        const __m256 va = _mm256_set1_ps(a[p * m + i]);
        acc = _mm256_add_ps(acc, _mm256_mul_ps(va, _mm256_loadu_ps(b + p * n + j)));
      }
      _mm256_storeu_ps(crow + j, acc);
    }
    for (; j < n; ++j) {
      float acc = crow[j];
      for (size_t p = 0; p < k; ++p) acc = acc + a[p * m + i] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

void gemm_nt_f32(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const float* brow = b + j * k;
      __m256 vacc = _mm256_setzero_ps();
      size_t p = 0;
      for (; p + 8 <= k; p += 8)
        vacc = _mm256_add_ps(vacc,
                             _mm256_mul_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p)));
      float acc = hsum(vacc);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = crow[j] + acc;
    }
  }
}

float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

float sum_f32(const float* x, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float dot_f32(const float* a, const float* b, size_t n) {
  __m256 acc = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  float s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float max_f32(const float* x, size_t n) {
  float m = x[0];
  size_t i = 0;
  if (n >= 8) {
    __m256 vm = _mm256_loadu_ps(x);
    for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
    __m128 lo = _mm_max_ps(_mm256_castps256_ps128(vm), _mm256_extractf128_ps(vm, 1));
    lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    m = _mm_cvtss_f32(lo);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

// exp for 8 floats, cephes-style polynomial, ~2 ulp over the finite range
__m256 exp256_ps(__m256 x) {
  const __m256 max_x = _mm256_set1_ps(88.3762626647949f);
  const __m256 min_x = _mm256_set1_ps(-87.3365478515625f);
  const __m256 log2e = _mm256_set1_ps(1.44269504088896341f);
  const __m256 c1 = _mm256_set1_ps(0.693359375f);
  const __m256 c2 = _mm256_set1_ps(-2.12194440e-4f);
  const __m256 one = _mm256_set1_ps(1.0f);

  x = _mm256_min_ps(_mm256_max_ps(x, min_x), max_x);
  __m256 fx = _mm256_round_ps(_mm256_mul_ps(x, log2e),
                              _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  x = _mm256_sub_ps(x, _mm256_mul_ps(fx, c1));
  x = _mm256_sub_ps(x, _mm256_mul_ps(fx, c2));

  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_add_ps(_mm256_mul_ps(y, x), _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_add_ps(_mm256_mul_ps(y, x), _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_add_ps(_mm256_mul_ps(y, x), _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_add_ps(_mm256_mul_ps(y, x), _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_add_ps(_mm256_mul_ps(y, x), _mm256_set1_ps(5.0000001201e-1f));
  y = _mm256_add_ps(_mm256_mul_ps(y, _mm256_mul_ps(x, x)), _mm256_add_ps(x, one));

  __m256i k = _mm256_cvtps_epi32(fx);
  k = _mm256_add_epi32(k, _mm256_set1_epi32(127));
  k = _mm256_slli_epi32(k, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(k));
}

void vexp_f32(const float* x, float* y, size_t n) {
  size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, exp256_ps(_mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

void silu_f32(const float* x, float* y, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 e = exp256_ps(_mm256_sub_ps(_mm256_setzero_ps(), vx));
    _mm256_storeu_ps(y + i, _mm256_div_ps(vx, _mm256_add_ps(one, e)));
  }
  for (; i < n; ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
}

void silu_bwd_f32(const float* x, const float* gy, float* gx, size_t n) {
  const __m256 one = _mm256_set1_ps(1.0f);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vx = _mm256_loadu_ps(x + i);
    const __m256 e = exp256_ps(_mm256_sub_ps(_mm256_setzero_ps(), vx));
    const __m256 s = _mm256_div_ps(one, _mm256_add_ps(one, e));
    // s * (1 + x*(1-s))
    __m256 d = _mm256_mul_ps(vx, _mm256_sub_ps(one, s));
    d = _mm256_mul_ps(s, _mm256_add_ps(one, d));
    __m256 g = _mm256_loadu_ps(gx + i);
    g = _mm256_add_ps(g, _mm256_mul_ps(_mm256_loadu_ps(gy + i), d));
    _mm256_storeu_ps(gx + i, g);
  }
  for (; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    gx[i] += gy[i] * (s * (1.0f + x[i] * (1.0f - s)));
  }
}

void adamw_f32(float* p, const float* g, float* m, float* v, size_t n, float lr,
               float beta1, float beta2, float eps, float wd, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1), v1mb1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2), v1mb2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 vlr = _mm256_set1_ps(lr), veps = _mm256_set1_ps(eps);
  const __m256 vwd = _mm256_set1_ps(wd);
  const __m256 vbc1 = _mm256_set1_ps(bc1), vbc2 = _mm256_set1_ps(bc2);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 vg = _mm256_loadu_ps(g + i);
    __m256 vm = _mm256_loadu_ps(m + i);
    __m256 vv = _mm256_loadu_ps(v + i);
    vm = _mm256_add_ps(_mm256_mul_ps(vb1, vm), _mm256_mul_ps(v1mb1, vg));
    vv = _mm256_add_ps(_mm256_mul_ps(vb2, vv), _mm256_mul_ps(v1mb2, _mm256_mul_ps(vg, vg)));
    _mm256_storeu_ps(m + i, vm);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_div_ps(vm, vbc1);
    const __m256 vhat = _mm256_div_ps(vv, vbc2);
    const __m256 upd = _mm256_div_ps(mhat, _mm256_add_ps(_mm256_sqrt_ps(vhat), veps));
    const __m256 vp0 = _mm256_loadu_ps(p + i);
    __m256 vp = _mm256_sub_ps(vp0, _mm256_mul_ps(vlr, upd));
    vp = _mm256_sub_ps(vp, _mm256_mul_ps(_mm256_mul_ps(vlr, vwd), vp0));
    _mm256_storeu_ps(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * (g[i] * g[i]);
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * p[i];
  }
}

// ---- f64 ----

void add_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_f64(double c, const double* x, double* y, size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = c * x[i];
}

void axpy_f64(double c, const double* x, double* y, size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_add_pd(vy, _mm256_mul_pd(vc, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + c * x[i];
}

void gemm_f64(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* ar0 = a + i * k;
    const double* ar1 = ar0 + k;
    const double* ar2 = ar1 + k;
    const double* ar3 = ar2 + k;
    double* cr0 = c + i * n;
    double* cr1 = cr0 + n;
    double* cr2 = cr1 + n;
    double* cr3 = cr2 + n;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d a0 = _mm256_loadu_pd(cr0 + j);
      __m256d a1 = _mm256_loadu_pd(cr1 + j);
      __m256d a2 = _mm256_loadu_pd(cr2 + j);
      __m256d a3 = _mm256_loadu_pd(cr3 + j);
      for (size_t kk = 0; kk < k; ++kk) {
        const __m256d vb = _mm256_loadu_pd(b + kk * n + j);
        a0 = _mm256_add_pd(a0, _mm256_mul_pd(_mm256_set1_pd(ar0[kk]), vb));
        a1 = _mm256_add_pd(a1, _mm256_mul_pd(_mm256_set1_pd(ar1[kk]), vb));
        a2 = _mm256_add_pd(a2, _mm256_mul_pd(_mm256_set1_pd(ar2[kk]), vb));
        a3 = _mm256_add_pd(a3, _mm256_mul_pd(_mm256_set1_pd(ar3[kk]), vb));
      }
      _mm256_storeu_pd(cr0 + j, a0);
      _mm256_storeu_pd(cr1 + j, a1);
      _mm256_storeu_pd(cr2 + j, a2);
      _mm256_storeu_pd(cr3 + j, a3);
    }
    for (; j < n; ++j) {
      double s0 = cr0[j], s1 = cr1[j], s2 = cr2[j], s3 = cr3[j];
      for (size_t kk = 0; kk < k; ++kk) {
        const double bv = b[kk * n + j];
        s0 = s0 + ar0[kk] * bv;
        s1 = s1 + ar1[kk] * bv;
        s2 = s2 + ar2[kk] * bv;
        s3 = s3 + ar3[kk] * bv;
      }
      cr0[j] = s0;
      cr1[j] = s1;
      cr2[j] = s2;
      cr3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(crow + j);
      for (size_t kk = 0; kk < k; ++kk) {
        const __m256d va = _mm256_set1_pd(arow[kk]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, _mm256_loadu_pd(b + kk * n + j)));
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (size_t kk = 0; kk < k; ++kk) acc = acc + arow[kk] * b[kk * n + j];
      crow[j] = acc;
    }
  }
}

void gemm_tn_f64(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_loadu_pd(crow + j);
      for (size_t p = 0; p < k; ++p) {
        const __m256d va = _mm256_set1_pd(a[p * m + i]);
        acc = _mm256_add_pd(acc, _mm256_mul_pd(va, _mm256_loadu_pd(b + p * n + j)));
      }
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (size_t p = 0; p < k; ++p) acc = acc + a[p * m + i] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

void gemm_nt_f64(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m256d vacc = _mm256_setzero_pd();
      size_t p = 0;
      for (; p + 4 <= k; p += 4)
        vacc = _mm256_add_pd(vacc,
                             _mm256_mul_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p)));
      double acc = hsum(vacc);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = crow[j] + acc;
    }
  }
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

double sum_f64(const double* x, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_f64(const double* a, const double* b, size_t n) {
  __m256d acc = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double max_f64(const double* x, size_t n) {
  double m = x[0];
  size_t i = 0;
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    __m128d lo = _mm_max_pd(_mm256_castpd256_pd128(vm), _mm256_extractf128_pd(vm, 1));
    m = _mm_cvtsd_f64(_mm_max_sd(lo, _mm_unpackhi_pd(lo, lo)));
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

// exp for 4 doubles: round-to-nearest k, hi/lo ln2 reduction, degree-13 Taylor
__m256d exp256_pd(__m256d x) {
  const __m256d max_x = _mm256_set1_pd(709.436);
  const __m256d min_x = _mm256_set1_pd(-708.396);
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);

  x = _mm256_min_pd(_mm256_max_pd(x, min_x), max_x);
  const __m256d kd = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                     _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_sub_pd(x, _mm256_mul_pd(kd, ln2_hi));
  r = _mm256_sub_pd(r, _mm256_mul_pd(kd, ln2_lo));

  // Horner over 1/j!
  static const double inv_fact[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
      1.0 / 362880.0,     1.0 / 40320.0,     1.0 / 5040.0,     1.0 / 720.0,
      1.0 / 120.0,        1.0 / 24.0,        1.0 / 6.0,        1.0 / 2.0};
  __m256d y = _mm256_set1_pd(inv_fact[0]);
  for (int j = 1; j < 12; ++j)
    y = _mm256_add_pd(_mm256_mul_pd(y, r), _mm256_set1_pd(inv_fact[j]));
  y = _mm256_add_pd(_mm256_mul_pd(y, r), _mm256_set1_pd(1.0));
  y = _mm256_add_pd(_mm256_mul_pd(y, r), _mm256_set1_pd(1.0));

  // 2^k via exponent bits
  const __m128i k32 = _mm256_cvtpd_epi32(kd);
  __m256i k64 = _mm256_cvtepi32_epi64(k32);
  k64 = _mm256_add_epi64(k64, _mm256_set1_epi64x(1023));
  k64 = _mm256_slli_epi64(k64, 52);
  return _mm256_mul_pd(y, _mm256_castsi256_pd(k64));
}

void vexp_f64(const double* x, double* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, exp256_pd(_mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = std::exp(x[i]);
}

void silu_f64(const double* x, double* y, size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d e = exp256_pd(_mm256_sub_pd(_mm256_setzero_pd(), vx));
    _mm256_storeu_pd(y + i, _mm256_div_pd(vx, _mm256_add_pd(one, e)));
  }
  for (; i < n; ++i) y[i] = x[i] / (1.0 + std::exp(-x[i]));
}

void silu_bwd_f64(const double* x, const double* gy, double* gx, size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d e = exp256_pd(_mm256_sub_pd(_mm256_setzero_pd(), vx));
    const __m256d s = _mm256_div_pd(one, _mm256_add_pd(one, e));
    __m256d d = _mm256_mul_pd(vx, _mm256_sub_pd(one, s));
    d = _mm256_mul_pd(s, _mm256_add_pd(one, d));
    __m256d g = _mm256_loadu_pd(gx + i);
    g = _mm256_add_pd(g, _mm256_mul_pd(_mm256_loadu_pd(gy + i), d));
    _mm256_storeu_pd(gx + i, g);
  }
  for (; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    gx[i] += gy[i] * (s * (1.0 + x[i] * (1.0 - s)));
  }
}

void adamw_f64(double* p, const double* g, double* m, double* v, size_t n, double lr,
               double beta1, double beta2, double eps, double wd, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1), v1mb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2), v1mb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d vlr = _mm256_set1_pd(lr), veps = _mm256_set1_pd(eps);
  const __m256d vwd = _mm256_set1_pd(wd);
  const __m256d vbc1 = _mm256_set1_pd(bc1), vbc2 = _mm256_set1_pd(bc2);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vg = _mm256_loadu_pd(g + i);
    __m256d vm = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    vm = _mm256_add_pd(_mm256_mul_pd(vb1, vm), _mm256_mul_pd(v1mb1, vg));
    vv = _mm256_add_pd(_mm256_mul_pd(vb2, vv), _mm256_mul_pd(v1mb2, _mm256_mul_pd(vg, vg)));
    _mm256_storeu_pd(m + i, vm);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(vm, vbc1);
    const __m256d vhat = _mm256_div_pd(vv, vbc2);
    const __m256d upd = _mm256_div_pd(mhat, _mm256_add_pd(_mm256_sqrt_pd(vhat), veps));
    const __m256d vp0 = _mm256_loadu_pd(p + i);
    __m256d vp = _mm256_sub_pd(vp0, _mm256_mul_pd(vlr, upd));
    vp = _mm256_sub_pd(vp, _mm256_mul_pd(_mm256_mul_pd(vlr, vwd), vp0));
    _mm256_storeu_pd(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * p[i];
  }
}

}  // namespace

const KernelTable<float>& table_f32() {
  static const KernelTable<float> t = {add_f32,     sub_f32,     mul_f32,  scale_f32,
                                       axpy_f32,    gemm_f32,    gemm_tn_f32, gemm_nt_f32,
                                       sum_f32,     dot_f32,     max_f32,  vexp_f32,
                                       silu_f32,    silu_bwd_f32, adamw_f32};
  return t;
}

const KernelTable<double>& table_f64() {
  static const KernelTable<double> t = {add_f64,     sub_f64,     mul_f64,  scale_f64,
                                        axpy_f64,    gemm_f64,    gemm_tn_f64, gemm_nt_f64,
                                        sum_f64,     dot_f64,     max_f64,  vexp_f64,
                                        silu_f64,    silu_bwd_f64, adamw_f64};
  return t;
}

}  // namespace progdit::kernels::avx2

#endif  // PROGDIT_HAVE_AVX2
