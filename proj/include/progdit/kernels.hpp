#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace progdit::kernels {

// Scalar reference kernels plus SIMD variants selected once at startup.
// add/sub/mul/scale/axpy/gemm/gemm_tn/adamw are bitwise-identical across
// backends (same per-element operation order, mul+add, no FMA contraction).
// Reductions (sum/dot/max), gemm_nt (per-dot lane partials) and the
// exp-based kernels (vexp/silu) may differ in the last bits between
// backends; equivalence tests bound the difference.
enum class Backend { kScalar, kAvx2, kNeon };

template <typename T>
struct KernelTable {
  void (*add)(const T* a, const T* b, T* y, size_t n);
  void (*sub)(const T* a, const T* b, T* y, size_t n);
  void (*mul)(const T* a, const T* b, T* y, size_t n);
  // y = c * x
  void (*scale)(T c, const T* x, T* y, size_t n);
  // y += c * x
  void (*axpy)(T c, const T* x, T* y, size_t n);
  // C += A (m x k, row-major) * B (k x n, row-major)
  void (*gemm)(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
  // C (m x n) += A (k x m)^T * B (k x n)
  void (*gemm_tn)(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
  // C (m x n) += A (m x k) * B (n x k)^T
  void (*gemm_nt)(const T* a, const T* b, T* c, size_t m, size_t k, size_t n);
  T (*sum)(const T* x, size_t n);
  T (*dot)(const T* a, const T* b, size_t n);
  T (*max)(const T* x, size_t n);
  void (*vexp)(const T* x, T* y, size_t n);
  void (*silu)(const T* x, T* y, size_t n);
  // gx += gy * silu'(x)
  void (*silu_bwd)(const T* x, const T* gy, T* gx, size_t n);
  // decoupled weight decay step with precomputed bias corrections
  void (*adamw)(T* p, const T* g, T* m, T* v, size_t n, T lr, T beta1, T beta2,
                T eps, T wd, T bias_c1, T bias_c2);
};

// the active backend's tables (selected at startup, overridable)
template <typename T>
const KernelTable<T>& active();

// a specific backend's tables, for equivalence tests
template <typename T>
const KernelTable<T>& table_for(Backend b);

Backend active_backend();
// returns false if the requested backend is unavailable on this machine
bool select_backend(Backend b);
// best available backend for this CPU
Backend detect_best();
std::vector<Backend> available_backends();

std::string backend_name(Backend b);

// applies PROGDIT_KERNELS=scalar|avx2|neon if set, otherwise detect_best()
void init_from_env();

}  // namespace progdit::kernels
