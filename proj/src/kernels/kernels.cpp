#include "progdit/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace progdit::kernels {

namespace {

Backend g_backend = Backend::kScalar;
const KernelTable<float>* g_f32 = &scalar::table_f32();
const KernelTable<double>* g_f64 = &scalar::table_f64();

bool backend_available(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if defined(PROGDIT_HAVE_AVX2)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Backend::kNeon:
#if defined(PROGDIT_HAVE_NEON)
      return true;  // baseline on aarch64
#else
      return false;
#endif
  }
  return false;
}

}  // namespace

template <>
const KernelTable<float>& active<float>() {
  return *g_f32;
}

template <>
const KernelTable<double>& active<double>() {
  return *g_f64;
}

template <>
const KernelTable<float>& table_for<float>(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return scalar::table_f32();
#if defined(PROGDIT_HAVE_AVX2)
    case Backend::kAvx2:
      return avx2::table_f32();
#endif
#if defined(PROGDIT_HAVE_NEON)
    case Backend::kNeon:
      return neon::table_f32();
#endif
    default:
      throw std::runtime_error("kernel backend not built: " + backend_name(b));
  }
}

template <>
const KernelTable<double>& table_for<double>(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return scalar::table_f64();
#if defined(PROGDIT_HAVE_AVX2)
    case Backend::kAvx2:
      return avx2::table_f64();
#endif
#if defined(PROGDIT_HAVE_NEON)
    case Backend::kNeon:
      return neon::table_f64();
#endif
    default:
      throw std::runtime_error("kernel backend not built: " + backend_name(b));
  }
}

Backend active_backend() { return g_backend; }

bool select_backend(Backend b) {
  if (!backend_available(b)) return false;
  g_backend = b;
  g_f32 = &table_for<float>(b);
  g_f64 = &table_for<double>(b);
  return true;
}

Backend detect_best() {
  if (backend_available(Backend::kAvx2)) return Backend::kAvx2;
  if (backend_available(Backend::kNeon)) return Backend::kNeon;
  return Backend::kScalar;
}

std::vector<Backend> available_backends() {
  std::vector<Backend> v{Backend::kScalar};
  if (backend_available(Backend::kAvx2)) v.push_back(Backend::kAvx2);
  if (backend_available(Backend::kNeon)) v.push_back(Backend::kNeon);
  return v;
}

std::string backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
    case Backend::kNeon:
      return "neon";
  }
  return "?";
}

void init_from_env() {
  if (const char* env = std::getenv("PROGDIT_KERNELS")) {
    const std::string want(env);
    for (Backend b : {Backend::kScalar, Backend::kAvx2, Backend::kNeon}) {
      if (backend_name(b) == want) {
        if (!select_backend(b))
          throw std::runtime_error("PROGDIT_KERNELS=" + want + " not available on this CPU");
        return;
      }
    }
    throw std::runtime_error("PROGDIT_KERNELS: unknown backend '" + want + "'");
  }
  select_backend(detect_best());
}

}  // namespace progdit::kernels
