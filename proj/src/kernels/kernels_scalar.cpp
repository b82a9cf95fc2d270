// Reference kernels. Plain loops, no intrinsics; the inner-loop operation
// order here is the contract the SIMD variants must reproduce bit-for-bit
// where the table in kernels.hpp says so.

#include <cmath>
#include <cstddef>

#include "progdit/kernels.hpp"

namespace progdit::kernels::scalar {

template <typename T>
void add(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void scale(T c, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = c * x[i];
}

template <typename T>
void axpy(T c, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = y[i] + c * x[i];
}

template <typename T>
void gemm(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // i-k-j order: each c[i,j] accumulates over k sequentially (mul then add)
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t kk = 0; kk < k; ++kk) {
      const T aik = arow[kk];
      const T* brow = b + kk * n;
      for (size_t j = 0; j < n; ++j) crow[j] = crow[j] + aik * brow[j];
    }
  }
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // C[i,j] += sum_p A[p,i] * B[p,j]; i-p-j order (p ascending per element)
  for (size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T api = a[p * m + i];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] = crow[j] + api * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  // C[i,j] += dot(A row i, B row j)
  for (size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = crow[j] + acc;
    }
  }
}

template <typename T>
T sum(const T* x, size_t n) {
  T s = T(0);
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T s = T(0);
  for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T vmax(const T* x, size_t n) {
  T m = x[0];
  for (size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

template <typename T>
void vexp(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = std::exp(x[i]);
}

template <typename T>
void silu(const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
}

template <typename T>
void silu_bwd(const T* x, const T* gy, T* gx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-x[i]));
    gx[i] += gy[i] * (s * (T(1) + x[i] * (T(1) - s)));
  }
}

template <typename T>
void adamw(T* p, const T* g, T* m, T* v, size_t n, T lr, T beta1, T beta2,
           T eps, T wd, T bias_c1, T bias_c2) {
  for (size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * (g[i] * g[i]);
    const T mhat = m[i] / bias_c1;
    const T vhat = v[i] / bias_c2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps)) - lr * wd * p[i];
  }
}

template <typename T>
KernelTable<T> make_table() {
  KernelTable<T> t;
  t.add = add<T>;
  t.sub = sub<T>;
  t.mul = mul<T>;
  t.scale = scale<T>;
  t.axpy = axpy<T>;
  t.gemm = gemm<T>;
  t.gemm_tn = gemm_tn<T>;
  t.gemm_nt = gemm_nt<T>;
  t.sum = sum<T>;
  t.dot = dot<T>;
  t.max = vmax<T>;
  t.vexp = vexp<T>;
  t.silu = silu<T>;
  t.silu_bwd = silu_bwd<T>;
  t.adamw = adamw<T>;
  return t;
}

const KernelTable<float>& table_f32() {
  static const KernelTable<float> t = make_table<float>();
  return t;
}

const KernelTable<double>& table_f64() {
  static const KernelTable<double> t = make_table<double>();
  return t;
}

}  // namespace progdit::kernels::scalar
