#pragma once

#include "progdit/kernels.hpp"

// per-backend table accessors; only the dispatch TU needs these
namespace progdit::kernels {

namespace scalar {
const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();
}  // namespace scalar

#if defined(PROGDIT_HAVE_AVX2)
namespace avx2 {
const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();
}  // namespace avx2
#endif

#if defined(PROGDIT_HAVE_NEON)
namespace neon {
const KernelTable<float>& table_f32();
const KernelTable<double>& table_f64();
}  // namespace neon
#endif

}  // namespace progdit::kernels
