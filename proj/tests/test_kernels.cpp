// Backend equivalence: every SIMD variant against the scalar reference.
// add/sub/mul/scale/axpy/gemm/adamw must match bitwise; reductions and the
// exp-based kernels are order/approximation sensitive and get tolerances.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "progdit/kernels.hpp"
#include "progdit/rng.hpp"

using namespace progdit;
using kernels::Backend;

namespace {

template <typename T>
std::vector<T> random_vec(Rng& rng, size_t n, double lo = -3.0, double hi = 3.0) {
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return v;
}

template <typename T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
double max_rel_diff(const std::vector<T>& a, const std::vector<T>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    m = std::max(m, std::abs(x - y) / (std::abs(x) + std::abs(y) + 1e-30));
  }
  return m;
}

// odd sizes on purpose: exercise the vector tails
const size_t kSizes[] = {1, 3, 8, 13, 32, 67, 257};

}  // namespace

TEST_CASE_TEMPLATE("elementwise kernels bitwise-equal across backends", T, float, double) {
  Rng rng(42);
  const auto& ref = kernels::table_for<T>(Backend::kScalar);
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    for (size_t n : kSizes) {
      auto x = random_vec<T>(rng, n);
      auto y = random_vec<T>(rng, n);
      std::vector<T> r1(n), r2(n);

      ref.add(x.data(), y.data(), r1.data(), n);
      kt.add(x.data(), y.data(), r2.data(), n);
      CHECK(bitwise_equal(r1, r2));

      ref.sub(x.data(), y.data(), r1.data(), n);
      kt.sub(x.data(), y.data(), r2.data(), n);
      CHECK(bitwise_equal(r1, r2));

      ref.mul(x.data(), y.data(), r1.data(), n);
      kt.mul(x.data(), y.data(), r2.data(), n);
      CHECK(bitwise_equal(r1, r2));

      ref.scale(T(1.7), x.data(), r1.data(), n);
      kt.scale(T(1.7), x.data(), r2.data(), n);
      CHECK(bitwise_equal(r1, r2));

      r1 = y;
      r2 = y;
      ref.axpy(T(-0.3), x.data(), r1.data(), n);
      kt.axpy(T(-0.3), x.data(), r2.data(), n);
      CHECK(bitwise_equal(r1, r2));
    }
  }
}

TEST_CASE_TEMPLATE("gemm bitwise-equal across backends and sizes", T, float, double) {
  Rng rng(7);
  const auto& ref = kernels::table_for<T>(Backend::kScalar);
  const std::array<std::array<size_t, 3>, 5> dims{
      {{1, 1, 1}, {3, 4, 2}, {5, 7, 17}, {16, 128, 384}, {13, 9, 33}}};
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    for (auto [m, k, n] : dims) {
      auto a = random_vec<T>(rng, m * k);
      auto bm = random_vec<T>(rng, k * n);
      std::vector<T> c1(m * n, T(0.5)), c2(m * n, T(0.5));  // accumulate semantics
      ref.gemm(a.data(), bm.data(), c1.data(), m, k, n);
      kt.gemm(a.data(), bm.data(), c2.data(), m, k, n);
      CHECK(bitwise_equal(c1, c2));
    }
  }
}

TEST_CASE("gemm matches naive triple-loop oracle to 1e-12 (f64)") {
  Rng rng(3);
  const size_t m = 3, k = 4, n = 2;
  auto a = random_vec<double>(rng, m * k);
  auto b = random_vec<double>(rng, k * n);
  std::vector<double> oracle(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      oracle[i * n + j] = acc;
    }
  for (Backend be : kernels::available_backends()) {
    std::vector<double> c(m * n, 0.0);
    kernels::table_for<double>(be).gemm(a.data(), b.data(), c.data(), m, k, n);
    for (size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE_TEMPLATE("reductions agree across backends within tolerance", T, float, double) {
  Rng rng(11);
  const double tol = std::is_same_v<T, float> ? 1e-5 : 1e-13;
  const auto& ref = kernels::table_for<T>(Backend::kScalar);
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    for (size_t n : kSizes) {
      auto x = random_vec<T>(rng, n);
      auto y = random_vec<T>(rng, n);
      CHECK(std::abs(ref.sum(x.data(), n) - kt.sum(x.data(), n)) <= tol * n * 10);
      CHECK(std::abs(ref.dot(x.data(), y.data(), n) - kt.dot(x.data(), y.data(), n)) <=
            tol * n * 10);
      CHECK(ref.max(x.data(), n) == kt.max(x.data(), n));  // max is exact
    }
  }
}

TEST_CASE_TEMPLATE("vexp/silu accuracy against libm", T, float, double) {
  Rng rng(13);
  const double tol = std::is_same_v<T, float> ? 4e-7 : 1e-14;
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    for (size_t n : kSizes) {
      auto x = random_vec<T>(rng, n, -40.0, 40.0);
      std::vector<T> ours(n), truth(n);
      kt.vexp(x.data(), ours.data(), n);
      for (size_t i = 0; i < n; ++i) truth[i] = static_cast<T>(std::exp((double)x[i]));
      CHECK(max_rel_diff(ours, truth) < tol);

      kt.silu(x.data(), ours.data(), n);
      for (size_t i = 0; i < n; ++i)
        truth[i] = static_cast<T>((double)x[i] / (1.0 + std::exp(-(double)x[i])));
      CHECK(max_rel_diff(ours, truth) < tol * 4);
    }
  }
}

TEST_CASE_TEMPLATE("silu_bwd agrees with analytic derivative", T, float, double) {
  Rng rng(17);
  const double tol = std::is_same_v<T, float> ? 2e-6 : 1e-13;
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    const size_t n = 129;
    auto x = random_vec<T>(rng, n, -10.0, 10.0);
    auto gy = random_vec<T>(rng, n);
    std::vector<T> gx(n, T(0)), truth(n);
    kt.silu_bwd(x.data(), gy.data(), gx.data(), n);
    for (size_t i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-(double)x[i]));
      truth[i] = static_cast<T>((double)gy[i] * (s * (1.0 + (double)x[i] * (1.0 - s))));
    }
    CHECK(max_rel_diff(gx, truth) < tol);
  }
}

TEST_CASE_TEMPLATE("adamw bitwise-equal across backends", T, float, double) {
  Rng rng(23);
  const auto& ref = kernels::table_for<T>(Backend::kScalar);
  for (Backend b : kernels::available_backends()) {
    const auto& kt = kernels::table_for<T>(b);
    for (size_t n : kSizes) {
      auto p1 = random_vec<T>(rng, n);
      auto g = random_vec<T>(rng, n);
      auto m1 = random_vec<T>(rng, n, 0.0, 0.1);
      std::vector<T> v1 = random_vec<T>(rng, n, 0.0, 0.1);
      auto p2 = p1;
      auto m2 = m1;
      auto v2 = v1;
      const T lr = T(1e-3), b1 = T(0.9), b2 = T(0.999), eps = T(1e-8), wd = T(0.01);
      const T bc1 = T(1) - T(std::pow((double)b1, 3.0));
      const T bc2 = T(1) - T(std::pow((double)b2, 3.0));
      ref.adamw(p1.data(), g.data(), m1.data(), v1.data(), n, lr, b1, b2, eps, wd, bc1, bc2);
      kt.adamw(p2.data(), g.data(), m2.data(), v2.data(), n, lr, b1, b2, eps, wd, bc1, bc2);
      CHECK(bitwise_equal(p1, p2));
      CHECK(bitwise_equal(m1, m2));
      CHECK(bitwise_equal(v1, v2));
    }
  }
}

TEST_CASE("backend selection respects availability") {
  CHECK(kernels::select_backend(Backend::kScalar));
  CHECK(kernels::active_backend() == Backend::kScalar);
  const auto best = kernels::detect_best();
  CHECK(kernels::select_backend(best));
  CHECK(kernels::active_backend() == best);
}
