// NEON kernels (aarch64). Same per-element order as the scalar reference for
// the bitwise-contract ops; exp-based kernels fall back to the scalar
// implementations (libm exp), reductions use lane partials.

#include <cmath>
#include <cstddef>

#include "kernels_impl.hpp"

#if defined(PROGDIT_HAVE_NEON)

#include <arm_neon.h>

namespace progdit::kernels::neon {

namespace {

// ---- f32 ----

void add_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vsubq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f32(const float* a, const float* b, float* y, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_f32(float c, const float* x, float* y, size_t n) {
  const float32x4_t vc = vdupq_n_f32(c);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vmulq_f32(vc, vld1q_f32(x + i)));
  for (; i < n; ++i) y[i] = c * x[i];
}

void axpy_f32(float c, const float* x, float* y, size_t n) {
  const float32x4_t vc = vdupq_n_f32(c);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float32x4_t vy = vld1q_f32(y + i);
    vy = vaddq_f32(vy, vmulq_f32(vc, vld1q_f32(x + i)));
    vst1q_f32(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + c * x[i];
}

void gemm_f32(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      float32x4_t acc0 = vld1q_f32(crow + j);
      float32x4_t acc1 = vld1q_f32(crow + j + 4);
      for (size_t kk = 0; kk < k; ++kk) {
        const float32x4_t va = vdupq_n_f32(arow[kk]);
        const float* brow = b + kk * n + j;
        acc0 = vaddq_f32(acc0, vmulq_f32(va, vld1q_f32(brow)));
        acc1 = vaddq_f32(acc1, vmulq_f32(va, vld1q_f32(brow + 4)));
      }
      vst1q_f32(crow + j, acc0);
      vst1q_f32(crow + j + 4, acc1);
    }
    for (; j < n; ++j) {
      float acc = crow[j];
      for (size_t kk = 0; kk < k; ++kk) acc = acc + arow[kk] * b[kk * n + j];
      crow[j] = acc;
    }
  }
}

float sum_f32(const float* x, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vld1q_f32(x + i));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float dot_f32(const float* a, const float* b, size_t n) {
  float32x4_t acc = vdupq_n_f32(0.0f);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = vaddq_f32(acc, vmulq_f32(vld1q_f32(a + i), vld1q_f32(b + i)));
  float s = vaddvq_f32(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float max_f32(const float* x, size_t n) {
  float m = x[0];
  size_t i = 0;
  if (n >= 4) {
    float32x4_t vm = vld1q_f32(x);
    for (i = 4; i + 4 <= n; i += 4) vm = vmaxq_f32(vm, vld1q_f32(x + i));
    m = vmaxvq_f32(vm);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

void adamw_f32(float* p, const float* g, float* m, float* v, size_t n, float lr,
               float beta1, float beta2, float eps, float wd, float bc1, float bc2) {
  const float32x4_t vb1 = vdupq_n_f32(beta1), v1mb1 = vdupq_n_f32(1.0f - beta1);
  const float32x4_t vb2 = vdupq_n_f32(beta2), v1mb2 = vdupq_n_f32(1.0f - beta2);
  const float32x4_t vlr = vdupq_n_f32(lr), veps = vdupq_n_f32(eps);
  const float32x4_t vlrwd = vdupq_n_f32(lr * wd);
  const float32x4_t vbc1 = vdupq_n_f32(bc1), vbc2 = vdupq_n_f32(bc2);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t vg = vld1q_f32(g + i);
    float32x4_t vm = vld1q_f32(m + i);
    float32x4_t vv = vld1q_f32(v + i);
    vm = vaddq_f32(vmulq_f32(vb1, vm), vmulq_f32(v1mb1, vg));
    vv = vaddq_f32(vmulq_f32(vb2, vv), vmulq_f32(v1mb2, vmulq_f32(vg, vg)));
    vst1q_f32(m + i, vm);
    vst1q_f32(v + i, vv);
    const float32x4_t mhat = vdivq_f32(vm, vbc1);
    const float32x4_t vhat = vdivq_f32(vv, vbc2);
    const float32x4_t upd = vdivq_f32(mhat, vaddq_f32(vsqrtq_f32(vhat), veps));
    const float32x4_t vp0 = vld1q_f32(p + i);
    float32x4_t vp = vsubq_f32(vp0, vmulq_f32(vlr, upd));
    vp = vsubq_f32(vp, vmulq_f32(vlrwd, vp0));
    vst1q_f32(p + i, vp);
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
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void sub_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] - b[i];
}

void mul_f64(const double* a, const double* b, double* y, size_t n) {
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void scale_f64(double c, const double* x, double* y, size_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(y + i, vmulq_f64(vc, vld1q_f64(x + i)));
  for (; i < n; ++i) y[i] = c * x[i];
}

void axpy_f64(double c, const double* x, double* y, size_t n) {
  const float64x2_t vc = vdupq_n_f64(c);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t vy = vld1q_f64(y + i);
    vy = vaddq_f64(vy, vmulq_f64(vc, vld1q_f64(x + i)));
    vst1q_f64(y + i, vy);
  }
  for (; i < n; ++i) y[i] = y[i] + c * x[i];
}

void gemm_f64(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t acc0 = vld1q_f64(crow + j);
      float64x2_t acc1 = vld1q_f64(crow + j + 2);
      for (size_t kk = 0; kk < k; ++kk) {
        const float64x2_t va = vdupq_n_f64(arow[kk]);
        const double* brow = b + kk * n + j;
        acc0 = vaddq_f64(acc0, vmulq_f64(va, vld1q_f64(brow)));
        acc1 = vaddq_f64(acc1, vmulq_f64(va, vld1q_f64(brow + 2)));
      }
      vst1q_f64(crow + j, acc0);
      vst1q_f64(crow + j + 2, acc1);
    }
    for (; j < n; ++j) {
      double acc = crow[j];
      for (size_t kk = 0; kk < k; ++kk) acc = acc + arow[kk] * b[kk * n + j];
      crow[j] = acc;
    }
  }
}

double sum_f64(const double* x, size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_f64(const double* a, const double* b, size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double max_f64(const double* x, size_t n) {
  double m = x[0];
  size_t i = 0;
  if (n >= 2) {
    float64x2_t vm = vld1q_f64(x);
    for (i = 2; i + 2 <= n; i += 2) vm = vmaxq_f64(vm, vld1q_f64(x + i));
    m = vmaxvq_f64(vm);
  }
  for (; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

void adamw_f64(double* p, const double* g, double* m, double* v, size_t n, double lr,
               double beta1, double beta2, double eps, double wd, double bc1, double bc2) {
  const float64x2_t vb1 = vdupq_n_f64(beta1), v1mb1 = vdupq_n_f64(1.0 - beta1);
  const float64x2_t vb2 = vdupq_n_f64(beta2), v1mb2 = vdupq_n_f64(1.0 - beta2);
  const float64x2_t vlr = vdupq_n_f64(lr), veps = vdupq_n_f64(eps);
  const float64x2_t vlrwd = vdupq_n_f64(lr * wd);
  const float64x2_t vbc1 = vdupq_n_f64(bc1), vbc2 = vdupq_n_f64(bc2);
  size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t vg = vld1q_f64(g + i);
    float64x2_t vm = vld1q_f64(m + i);
    float64x2_t vv = vld1q_f64(v + i);
    vm = vaddq_f64(vmulq_f64(vb1, vm), vmulq_f64(v1mb1, vg));
    vv = vaddq_f64(vmulq_f64(vb2, vv), vmulq_f64(v1mb2, vmulq_f64(vg, vg)));
    vst1q_f64(m + i, vm);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(vm, vbc1);
    const float64x2_t vhat = vdivq_f64(vv, vbc2);
    const float64x2_t upd = vdivq_f64(mhat, vaddq_f64(vsqrtq_f64(vhat), veps));
    const float64x2_t vp0 = vld1q_f64(p + i);
    float64x2_t vp = vsubq_f64(vp0, vmulq_f64(vlr, upd));
    vp = vsubq_f64(vp, vmulq_f64(vlrwd, vp0));
    vst1q_f64(p + i, vp);
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * p[i];
  }
}


void gemm_tn_f32(const float* a, const float* b, float* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float32x4_t acc = vld1q_f32(crow + j);
      for (size_t p = 0; p < k; ++p) {
        const float32x4_t va = vdupq_n_f32(a[p * m + i]);
        acc = vaddq_f32(acc, vmulq_f32(va, vld1q_f32(b + p * n + j)));
      }
      vst1q_f32(crow + j, acc);
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
      float32x4_t vacc = vdupq_n_f32(0.0f);
      size_t p = 0;
      for (; p + 4 <= k; p += 4)
        vacc = vaddq_f32(vacc, vmulq_f32(vld1q_f32(arow + p), vld1q_f32(brow + p)));
      float acc = vaddvq_f32(vacc);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = crow[j] + acc;
    }
  }
}

void gemm_tn_f64(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    size_t j = 0;
    for (; j + 2 <= n; j += 2) {
      float64x2_t acc = vld1q_f64(crow + j);
      for (size_t p = 0; p < k; ++p) {
        const float64x2_t va = vdupq_n_f64(a[p * m + i]);
        acc = vaddq_f64(acc, vmulq_f64(va, vld1q_f64(b + p * n + j)));
      }
      vst1q_f64(crow + j, acc);
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
      float64x2_t vacc = vdupq_n_f64(0.0);
      size_t p = 0;
      for (; p + 2 <= k; p += 2)
        vacc = vaddq_f64(vacc, vmulq_f64(vld1q_f64(arow + p), vld1q_f64(brow + p)));
      double acc = vaddvq_f64(vacc);
      for (; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = crow[j] + acc;
    }
  }
}

// exp-family: scalar fallbacks (libm); vectorizing exp on NEON buys little here
void vexp_s_f32(const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
void silu_s_f32(const float* x, float* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] / (1.0f + std::exp(-x[i]));
}
void silu_bwd_s_f32(const float* x, const float* gy, float* gx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const float s = 1.0f / (1.0f + std::exp(-x[i]));
    gx[i] += gy[i] * (s * (1.0f + x[i] * (1.0f - s)));
  }
}
void vexp_s_f64(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}
void silu_s_f64(const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] / (1.0 + std::exp(-x[i]));
}
void silu_bwd_s_f64(const double* x, const double* gy, double* gx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x[i]));
    gx[i] += gy[i] * (s * (1.0 + x[i] * (1.0 - s)));
  }
}

}  // namespace

const KernelTable<float>& table_f32() {
  static const KernelTable<float> t = {add_f32,     sub_f32,     mul_f32,  scale_f32,
                                       axpy_f32,    gemm_f32,    gemm_tn_f32, gemm_nt_f32,
                                       sum_f32,     dot_f32,     max_f32,  vexp_s_f32,
                                       silu_s_f32,  silu_bwd_s_f32, adamw_f32};
  return t;
}

const KernelTable<double>& table_f64() {
  static const KernelTable<double> t = {add_f64,     sub_f64,     mul_f64,  scale_f64,
                                        axpy_f64,    gemm_f64,    gemm_tn_f64, gemm_nt_f64,
                                        sum_f64,     dot_f64,     max_f64,  vexp_s_f64,
                                        silu_s_f64,  silu_bwd_s_f64, adamw_f64};
  return t;
}

}  // namespace progdit::kernels::neon

#endif  // PROGDIT_HAVE_NEON
