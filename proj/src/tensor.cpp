#include "progdit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "progdit/errors.hpp"
#include "progdit/kernels.hpp"

namespace progdit {

namespace {

template <class F>
decltype(auto) dispatch_dtype(DType dt, F&& f) {
  if (dt == DType::kF32) return f.template operator()<float>();
  return f.template operator()<double>();
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e < 0) throw std::invalid_argument("tensor: negative extent");
    n *= e;
  }
  return n;
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

template <typename T>
std::vector<T> transposed(std::span<const T> x, int64_t r, int64_t c) {
  std::vector<T> out(static_cast<size_t>(r * c));
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return out;
}

thread_local bool g_no_grad = false;
thread_local int g_no_grad_depth = 0;

}  // namespace

std::string dtype_name(DType dt) { return dt == DType::kF32 ? "f32" : "f64"; }

// ---- Storage ----

namespace detail {

template <typename T>
std::span<T> Storage::data() {
  if constexpr (std::is_same_v<T, float>) {
    if (dtype != DType::kF32) throw std::logic_error("tensor: f32 view of f64 tensor");
    return f32;
  } else {
    if (dtype != DType::kF64) throw std::logic_error("tensor: f64 view of f32 tensor");
    return f64;
  }
}

template <typename T>
std::span<const T> Storage::cdata() const {
  if constexpr (std::is_same_v<T, float>) {
    if (dtype != DType::kF32) throw std::logic_error("tensor: f32 view of f64 tensor");
    return f32;
  } else {
    if (dtype != DType::kF64) throw std::logic_error("tensor: f64 view of f32 tensor");
    return f64;
  }
}

template <typename T>
std::span<T> Storage::grad() {
  if constexpr (std::is_same_v<T, float>) {
    if (grad32.empty()) grad32.assign(static_cast<size_t>(numel), 0.0f);
    return grad32;
  } else {
    if (grad64.empty()) grad64.assign(static_cast<size_t>(numel), 0.0);
    return grad64;
  }
}

bool Storage::has_grad() const { return !grad32.empty() || !grad64.empty(); }

void Storage::drop_grad() {
  grad32.clear();
  grad32.shrink_to_fit();
  grad64.clear();
  grad64.shrink_to_fit();
}

template std::span<float> Storage::data<float>();
template std::span<double> Storage::data<double>();
template std::span<const float> Storage::cdata<float>() const;
template std::span<const double> Storage::cdata<double>() const;
template std::span<float> Storage::grad<float>();
template std::span<double> Storage::grad<double>();

}  // namespace detail

// ---- Tensor ----

static std::shared_ptr<detail::Storage> make_storage(std::vector<int64_t> shape, DType dt) {
  auto s = std::make_shared<detail::Storage>();
  s->dtype = dt;
  s->numel = shape_numel(shape);
  s->shape = std::move(shape);
  if (dt == DType::kF32)
    s->f32.assign(static_cast<size_t>(s->numel), 0.0f);
  else
    s->f64.assign(static_cast<size_t>(s->numel), 0.0);
  return s;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, DType dt) {
  return wrap(make_storage(std::move(shape), dt));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch_dtype(dt, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from_values(std::vector<int64_t> shape, std::span<const double> values, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  if (static_cast<int64_t>(values.size()) != t.numel())
    throw std::invalid_argument("from_values: " + std::to_string(values.size()) +
                                " values for shape " + shape_str(t.shape()));
  dispatch_dtype(dt, [&]<typename T>() {
    auto d = t.data<T>();
    for (size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::randn(std::vector<int64_t> shape, Rng& rng, double stddev, DType dt) {
  Tensor t = zeros(std::move(shape), dt);
  dispatch_dtype(dt, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(stddev * rng.normal());
  });
  return t;
}

double Tensor::value_at(int64_t flat) const {
  return dispatch_dtype(dtype(), [&]<typename T>() -> double {
    return static_cast<double>(data<T>()[static_cast<size_t>(flat)]);
  });
}

void Tensor::set_value(int64_t flat, double v) {
  dispatch_dtype(dtype(), [&]<typename T>() {
    s_->data<T>()[static_cast<size_t>(flat)] = static_cast<T>(v);
  });
}

double Tensor::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar(): tensor has " +
                                                std::to_string(numel()) + " elements");
  return value_at(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = value_at(i);
  return out;
}

double Tensor::grad_at(int64_t flat) const {
  if (!s_->has_grad()) return 0.0;
  return dispatch_dtype(dtype(), [&]<typename T>() -> double {
    return static_cast<double>(s_->grad<T>()[static_cast<size_t>(flat)]);
  });
}

void Tensor::zero_grad() { s_->drop_grad(); }

Tensor Tensor::clone() const {
  Tensor t = zeros(shape(), dtype());
  dispatch_dtype(dtype(), [&]<typename T>() {
    auto src = data<T>();
    auto dst = t.data<T>();
    std::copy(src.begin(), src.end(), dst.begin());
  });
  return t;
}

Tensor Tensor::view_as(std::vector<int64_t> shape) const {
  if (shape_numel(shape) != numel())
    throw std::invalid_argument("view_as: numel mismatch " + shape_str(shape) + " vs " +
                                shape_str(this->shape()));
  auto s = std::make_shared<detail::Storage>(*s_);
  s->shape = std::move(shape);
  return wrap(std::move(s));
}

// ---- Tape ----

Tape& Tape::active() {
  thread_local Tape t;
  return t;
}

bool Tape::recording() { return !g_no_grad; }

void Tape::record(std::vector<std::shared_ptr<detail::Storage>> inputs,
                  std::shared_ptr<detail::Storage> output, std::function<void()> backward) {
  nodes_.push_back(Node{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::clear() { nodes_.clear(); }

NoGradGuard::NoGradGuard() {
  ++g_no_grad_depth;
  g_no_grad = true;
}

NoGradGuard::~NoGradGuard() {
  if (--g_no_grad_depth == 0) g_no_grad = false;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar, got " +
                                                     shape_str(loss.shape()));
  auto& tape = Tape::active();
  dispatch_dtype(loss.dtype(), [&]<typename T>() {
    loss.storage()->grad<T>()[0] += T(1);
  });
  auto& nodes = tape.nodes_;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    if (!it->output->has_grad()) continue;  // no path to the loss
    it->backward();
  }
  tape.clear();
}

// ---- op helpers ----

namespace {

bool any_requires(std::initializer_list<Tensor> ts) {
  for (const auto& t : ts)
    if (t.requires_grad()) return true;
  return false;
}

Tensor make_out(std::vector<int64_t> shape, DType dt, bool needs_grad) {
  Tensor t = Tensor::zeros(std::move(shape), dt);
  t.set_requires_grad(needs_grad);
  return t;
}

void maybe_record(std::initializer_list<Tensor> inputs, const Tensor& out,
                  std::function<void()> bwd) {
  if (!Tape::recording() || !out.requires_grad()) return;
  std::vector<std::shared_ptr<detail::Storage>> in;
  for (const auto& t : inputs) in.push_back(t.storage());
  Tape::active().record(std::move(in), out.storage(), std::move(bwd));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype())
    throw std::invalid_argument(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) +
                                " vs " + dtype_name(b.dtype()));
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  require_same_dtype(a, b, "add");
  Tensor out = make_out(a.shape(), a.dtype(), any_requires({a, b}));
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    kernels::active<T>().add(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(),
                             static_cast<size_t>(a.numel()));
  });
  maybe_record({a, b}, out, [as = a.storage(), bs = b.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      const size_t n = gy.size();
      if (as->requires_grad)
        kernels::active<T>().axpy(T(1), gy.data(), as->grad<T>().data(), n);
      if (bs->requires_grad)
        kernels::active<T>().axpy(T(1), gy.data(), bs->grad<T>().data(), n);
    });
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  require_same_dtype(a, b, "sub");
  Tensor out = make_out(a.shape(), a.dtype(), any_requires({a, b}));
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    kernels::active<T>().sub(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(),
                             static_cast<size_t>(a.numel()));
  });
  maybe_record({a, b}, out, [as = a.storage(), bs = b.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      const size_t n = gy.size();
      if (as->requires_grad)
        kernels::active<T>().axpy(T(1), gy.data(), as->grad<T>().data(), n);
      if (bs->requires_grad)
        kernels::active<T>().axpy(T(-1), gy.data(), bs->grad<T>().data(), n);
    });
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  require_same_dtype(a, b, "mul");
  Tensor out = make_out(a.shape(), a.dtype(), any_requires({a, b}));
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    kernels::active<T>().mul(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(),
                             static_cast<size_t>(a.numel()));
  });
  maybe_record({a, b}, out, [as = a.storage(), bs = b.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      const size_t n = gy.size();
      std::vector<T> tmp(n);
      if (as->requires_grad) {
        kernels::active<T>().mul(gy.data(), bs->cdata<T>().data(), tmp.data(), n);
        kernels::active<T>().axpy(T(1), tmp.data(), as->grad<T>().data(), n);
      }
      if (bs->requires_grad) {
        kernels::active<T>().mul(gy.data(), as->cdata<T>().data(), tmp.data(), n);
        kernels::active<T>().axpy(T(1), tmp.data(), bs->grad<T>().data(), n);
      }
    });
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), a.dtype(), a.requires_grad());
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    kernels::active<T>().scale(static_cast<T>(c), a.data<T>().data(), out.data<T>().data(),
                               static_cast<size_t>(a.numel()));
  });
  maybe_record({a}, out, [as = a.storage(), os = out.storage(), c]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      kernels::active<T>().axpy(static_cast<T>(c), gy.data(), as->grad<T>().data(), gy.size());
    });
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = make_out(a.shape(), a.dtype(), a.requires_grad());
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    auto src = a.data<T>();
    auto dst = out.data<T>();
    const T tc = static_cast<T>(c);
    for (size_t i = 0; i < src.size(); ++i) dst[i] = src[i] + tc;
  });
  maybe_record({a}, out, [as = a.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      kernels::active<T>().axpy(T(1), gy.data(), as->grad<T>().data(), gy.size());
    });
  });
  return out;
}

// ---- row-broadcast ----

static void require_rowvec(const Tensor& x, const Tensor& v, const char* op) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(1) != v.dim(0))
    throw std::invalid_argument(std::string(op) + ": want [R x C] with [C], got " +
                                shape_str(x.shape()) + " and " + shape_str(v.shape()));
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rowvec(x, v, "add_rowvec");
  require_same_dtype(x, v, "add_rowvec");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_out(x.shape(), x.dtype(), any_requires({x, v}));
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto vs = v.data<T>();
    auto os = out.data<T>();
    for (int64_t r = 0; r < rows; ++r)
      kernels::active<T>().add(xs.data() + r * cols, vs.data(), os.data() + r * cols,
                               static_cast<size_t>(cols));
  });
  maybe_record({x, v}, out, [xs = x.storage(), vs = v.storage(), os = out.storage(), rows,
                             cols]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      if (xs->requires_grad)
        kernels::active<T>().axpy(T(1), gy.data(), xs->grad<T>().data(), gy.size());
      if (vs->requires_grad) {
        auto gv = vs->grad<T>();
        for (int64_t r = 0; r < rows; ++r)
          kernels::active<T>().axpy(T(1), gy.data() + r * cols, gv.data(),
                                    static_cast<size_t>(cols));
      }
    });
  });
  return out;
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
  require_rowvec(x, v, "mul_rowvec");
  require_same_dtype(x, v, "mul_rowvec");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_out(x.shape(), x.dtype(), any_requires({x, v}));
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto vs = v.data<T>();
    auto os = out.data<T>();
    for (int64_t r = 0; r < rows; ++r)
      kernels::active<T>().mul(xs.data() + r * cols, vs.data(), os.data() + r * cols,
                               static_cast<size_t>(cols));
  });
  maybe_record({x, v}, out, [xs = x.storage(), vs = v.storage(), os = out.storage(), rows,
                             cols]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      std::vector<T> tmp(static_cast<size_t>(cols));
      if (xs->requires_grad) {
        auto gx = xs->grad<T>();
        for (int64_t r = 0; r < rows; ++r) {
          kernels::active<T>().mul(gy.data() + r * cols, vs->cdata<T>().data(), tmp.data(),
                                   static_cast<size_t>(cols));
          kernels::active<T>().axpy(T(1), tmp.data(), gx.data() + r * cols,
                                    static_cast<size_t>(cols));
        }
      }
      if (vs->requires_grad) {
        auto gv = vs->grad<T>();
        for (int64_t r = 0; r < rows; ++r) {
          kernels::active<T>().mul(gy.data() + r * cols, xs->cdata<T>().data() + r * cols,
                                   tmp.data(), static_cast<size_t>(cols));
          kernels::active<T>().axpy(T(1), tmp.data(), gv.data(), static_cast<size_t>(cols));
        }
      }
    });
  });
  return out;
}

Tensor add_colvec(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.dim(0) != v.dim(0))
    throw std::invalid_argument("add_colvec: want [R x C] with [R], got " +
                                shape_str(x.shape()) + " and " + shape_str(v.shape()));
  require_same_dtype(x, v, "add_colvec");
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out = make_out(x.shape(), x.dtype(), any_requires({x, v}));
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto vs = v.data<T>();
    auto os = out.data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T b = vs[static_cast<size_t>(r)];
      for (int64_t c = 0; c < cols; ++c)
        os[static_cast<size_t>(r * cols + c)] = xs[static_cast<size_t>(r * cols + c)] + b;
    }
  });
  maybe_record({x, v}, out, [xs = x.storage(), vs = v.storage(), os = out.storage(), rows,
                             cols]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      if (xs->requires_grad)
        kernels::active<T>().axpy(T(1), gy.data(), xs->grad<T>().data(), gy.size());
      if (vs->requires_grad) {
        auto gv = vs->grad<T>();
        for (int64_t r = 0; r < rows; ++r)
          gv[static_cast<size_t>(r)] +=
              kernels::active<T>().sum(gy.data() + r * cols, static_cast<size_t>(cols));
      }
    });
  });
  return out;
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul: rank-2 tensors required, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  require_same_dtype(a, b, "matmul");
  const int64_t m = trans_a ? a.dim(1) : a.dim(0);
  const int64_t k = trans_a ? a.dim(0) : a.dim(1);
  const int64_t kb = trans_b ? b.dim(1) : b.dim(0);
  const int64_t n = trans_b ? b.dim(0) : b.dim(1);
  if (k != kb)
    throw std::invalid_argument("matmul: inner extents differ: " + shape_str(a.shape()) +
                                (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                                (trans_b ? "^T" : ""));
  Tensor out = make_out({m, n}, a.dtype(), any_requires({a, b}));
  dispatch_dtype(a.dtype(), [&]<typename T>() {
    auto& kt = kernels::active<T>();
    const T* ap = a.data<T>().data();
    const T* bp = b.data<T>().data();
    T* cp = out.data<T>().data();
    const auto mm = static_cast<size_t>(m), kk = static_cast<size_t>(k),
               nn = static_cast<size_t>(n);
    if (!trans_a && !trans_b) {
      kt.gemm(ap, bp, cp, mm, kk, nn);
    } else if (!trans_a && trans_b) {
      kt.gemm_nt(ap, bp, cp, mm, kk, nn);
    } else if (trans_a && !trans_b) {
      kt.gemm_tn(ap, bp, cp, mm, kk, nn);
    } else {
      const std::vector<T> at = transposed<T>(a.data<T>(), a.dim(0), a.dim(1));
      kt.gemm_nt(at.data(), bp, cp, mm, kk, nn);
    }
  });
  maybe_record({a, b}, out, [as = a.storage(), bs = b.storage(), os = out.storage(), trans_a,
                             trans_b, m, k, n]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto& kt = kernels::active<T>();
      auto gy = os->grad<T>();  // [m x n]
      const auto mm = static_cast<size_t>(m), kk = static_cast<size_t>(k),
                 nn = static_cast<size_t>(n);
      if (as->requires_grad) {
        auto ga = as->grad<T>();
        const T* bp = bs->cdata<T>().data();
        if (!trans_a && !trans_b) {
          kt.gemm_nt(gy.data(), bp, ga.data(), mm, nn, kk);  // dA += gy * B^T
        } else if (!trans_a && trans_b) {
          kt.gemm(gy.data(), bp, ga.data(), mm, nn, kk);  // dA += gy * B
        } else if (trans_a && !trans_b) {
          kt.gemm_nt(bp, gy.data(), ga.data(), kk, nn, mm);  // dA^T += B * gy^T
        } else {
          std::vector<T> tmp(static_cast<size_t>(m * k), T(0));
          kt.gemm(gy.data(), bp, tmp.data(), mm, nn, kk);
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < k; ++j) ga[j * m + i] += tmp[i * k + j];
        }
      }
      if (bs->requires_grad) {
        auto gb = bs->grad<T>();
        const T* ap = as->cdata<T>().data();
        if (!trans_a && !trans_b) {
          kt.gemm_tn(ap, gy.data(), gb.data(), kk, mm, nn);  // dB += A^T * gy
        } else if (trans_a && !trans_b) {
          kt.gemm(ap, gy.data(), gb.data(), kk, mm, nn);  // dB += A * gy
        } else if (!trans_a && trans_b) {
          kt.gemm_tn(gy.data(), ap, gb.data(), nn, mm, kk);  // dB^T += gy^T * A
        } else {
          std::vector<T> tmp(static_cast<size_t>(k * n), T(0));
          kt.gemm(ap, gy.data(), tmp.data(), kk, mm, nn);
          for (int64_t i = 0; i < k; ++i)
            for (int64_t j = 0; j < n; ++j) gb[j * k + i] += tmp[i * n + j];
        }
      }
    });
  });
  return out;
}

// ---- softmax / layer_norm / silu ----

Tensor softmax_lastdim(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() < 1)
    throw std::invalid_argument("softmax_lastdim: empty last dimension in " +
                                shape_str(x.shape()));
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  Tensor out = make_out(x.shape(), x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto& kt = kernels::active<T>();
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    std::vector<T> shifted(static_cast<size_t>(cols));
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * cols;
      T* yrow = ys.data() + r * cols;
      const T mx = kt.max(row, static_cast<size_t>(cols));
      for (int64_t j = 0; j < cols; ++j) shifted[static_cast<size_t>(j)] = row[j] - mx;
      kt.vexp(shifted.data(), yrow, static_cast<size_t>(cols));
      const T s = kt.sum(yrow, static_cast<size_t>(cols));
      for (int64_t j = 0; j < cols; ++j) yrow[j] = yrow[j] / s;
    }
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage(), rows, cols]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto& kt = kernels::active<T>();
      auto gy = os->grad<T>();
      auto y = os->cdata<T>();
      auto gx = xs->grad<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* yr = y.data() + r * cols;
        const T* gyr = gy.data() + r * cols;
        T* gxr = gx.data() + r * cols;
        const T d = kt.dot(yr, gyr, static_cast<size_t>(cols));
        for (int64_t j = 0; j < cols; ++j) gxr[j] += yr[j] * (gyr[j] - d);
      }
    });
  });
  return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (x.rank() == 0 || x.shape().back() < 1)
    throw std::invalid_argument("layer_norm: empty last dimension in " + shape_str(x.shape()));
  const int64_t cols = x.shape().back();
  const int64_t rows = x.numel() / cols;
  Tensor out = make_out(x.shape(), x.dtype(), x.requires_grad());
  // saved for backward: inv_std per row (xhat is the output itself)
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto& kt = kernels::active<T>();
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * cols;
      T* yrow = ys.data() + r * cols;
      const T mean = kt.sum(row, static_cast<size_t>(cols)) / static_cast<T>(cols);
      T var = T(0);
      for (int64_t j = 0; j < cols; ++j) {
        const T d = row[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(cols);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      (*inv_std)[static_cast<size_t>(r)] = static_cast<double>(inv);
      for (int64_t j = 0; j < cols; ++j) yrow[j] = (row[j] - mean) * inv;
    }
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage(), rows, cols, inv_std]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto& kt = kernels::active<T>();
      auto gy = os->grad<T>();
      auto xhat = os->cdata<T>();
      auto gx = xs->grad<T>();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gyr = gy.data() + r * cols;
        const T* xr = xhat.data() + r * cols;
        T* gxr = gx.data() + r * cols;
        const T inv = static_cast<T>((*inv_std)[static_cast<size_t>(r)]);
        const T mg = kt.sum(gyr, static_cast<size_t>(cols)) / static_cast<T>(cols);
        const T mgx = kt.dot(gyr, xr, static_cast<size_t>(cols)) / static_cast<T>(cols);
        for (int64_t j = 0; j < cols; ++j) gxr[j] += inv * (gyr[j] - mg - xr[j] * mgx);
      }
    });
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out = make_out(x.shape(), x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    kernels::active<T>().silu(x.data<T>().data(), out.data<T>().data(),
                              static_cast<size_t>(x.numel()));
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      kernels::active<T>().silu_bwd(xs->cdata<T>().data(), gy.data(), xs->grad<T>().data(),
                                    gy.size());
    });
  });
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = make_out(x.shape(), x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (size_t i = 0; i < src.size(); ++i) {
      if (!(src[i] > T(0))) throw NumericError("log: non-positive input");
      dst[i] = std::log(src[i]);
    }
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      auto xv = xs->cdata<T>();
      auto gx = xs->grad<T>();
      for (size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] / xv[i];
    });
  });
  return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& x, std::vector<int64_t> shape) {
  if (shape_numel(shape) != x.numel())
    throw std::invalid_argument("reshape: numel mismatch " + shape_str(x.shape()) + " -> " +
                                shape_str(shape));
  Tensor out = make_out(std::move(shape), x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    std::copy(src.begin(), src.end(), dst.begin());
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      kernels::active<T>().axpy(T(1), gy.data(), xs->grad<T>().data(), gy.size());
    });
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, size_t dim) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const size_t rank = parts[0].rank();
  if (dim >= rank || (dim != 0 && !(rank == 2 && dim == 1)))
    throw std::invalid_argument("concat: dim 0 (any rank) or dim 1 (rank 2) only");
  for (const auto& p : parts) {
    if (p.rank() != rank || p.dtype() != parts[0].dtype())
      throw std::invalid_argument("concat: mixed ranks/dtypes");
  }
  bool needs_grad = false;
  for (const auto& p : parts) needs_grad |= p.requires_grad();

  std::vector<int64_t> oshape = parts[0].shape();
  for (size_t i = 1; i < parts.size(); ++i) {
    for (size_t d = 0; d < rank; ++d) {
      if (d == dim) continue;
      if (parts[i].dim(d) != oshape[d])
        throw std::invalid_argument("concat: off-axis extent mismatch " +
                                    shape_str(parts[i].shape()) + " vs " + shape_str(oshape));
    }
    oshape[dim] += parts[i].dim(dim);
  }
  Tensor out = make_out(oshape, parts[0].dtype(), needs_grad);

  // copy plan: (dst offset, src part, rows x cols strided)
  dispatch_dtype(out.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    if (rank == 1 || dim == 0) {
      int64_t off = 0;
      for (const auto& p : parts) {
        auto src = p.data<T>();
        std::copy(src.begin(), src.end(), dst.begin() + off);
        off += p.numel();
      }
    } else {  // rank 2, dim 1
      const int64_t rows = oshape[0], ocols = oshape[1];
      int64_t coff = 0;
      for (const auto& p : parts) {
        auto src = p.data<T>();
        const int64_t pc = p.dim(1);
        for (int64_t r = 0; r < rows; ++r)
          std::copy(src.begin() + r * pc, src.begin() + (r + 1) * pc,
                    dst.begin() + r * ocols + coff);
        coff += pc;
      }
    }
  });

  if (Tape::recording() && needs_grad) {
    std::vector<std::shared_ptr<detail::Storage>> in;
    for (const auto& p : parts) in.push_back(p.storage());
    auto os = out.storage();
    auto oshape_c = oshape;
    Tape::active().record(in, os, [in, os, oshape_c, dim, rank]() {
      dispatch_dtype(os->dtype, [&]<typename T>() {
        auto gy = os->grad<T>();
        if (rank == 1 || dim == 0) {
          int64_t off = 0;
          for (auto& p : in) {
            if (p->requires_grad)
              kernels::active<T>().axpy(T(1), gy.data() + off, p->grad<T>().data(),
                                        static_cast<size_t>(p->numel));
            off += p->numel;
          }
        } else {
          const int64_t rows = oshape_c[0], ocols = oshape_c[1];
          int64_t coff = 0;
          for (auto& p : in) {
            const int64_t pc = p->shape[1];
            if (p->requires_grad) {
              auto gp = p->grad<T>();
              for (int64_t r = 0; r < rows; ++r)
                kernels::active<T>().axpy(T(1), gy.data() + r * ocols + coff,
                                          gp.data() + r * pc, static_cast<size_t>(pc));
            }
            coff += pc;
          }
        }
      });
    });
  }
  return out;
}

Tensor narrow(const Tensor& x, size_t dim, int64_t start, int64_t length) {
  if (x.rank() > 2 || dim >= x.rank()) throw std::invalid_argument("narrow: rank-1/2 only");
  if (start < 0 || length < 0 || start + length > x.dim(dim))
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                std::to_string(start + length) + ") out of " +
                                shape_str(x.shape()));
  std::vector<int64_t> oshape = x.shape();
  oshape[dim] = length;
  Tensor out = make_out(oshape, x.dtype(), x.requires_grad());
  const bool rowslice = (x.rank() == 1 || dim == 0);
  const int64_t cols = x.rank() == 2 ? x.dim(1) : 1;
  const int64_t rows = x.rank() == 2 ? x.dim(0) : x.dim(0);
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    if (rowslice) {
      std::copy(src.begin() + start * cols, src.begin() + (start + length) * cols, dst.begin());
    } else {
      for (int64_t r = 0; r < rows; ++r)
        std::copy(src.begin() + r * cols + start, src.begin() + r * cols + start + length,
                  dst.begin() + r * length);
    }
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage(), rowslice, start, length, rows,
                          cols]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      auto gx = xs->grad<T>();
      if (rowslice) {
        kernels::active<T>().axpy(T(1), gy.data(), gx.data() + start * cols, gy.size());
      } else {
        for (int64_t r = 0; r < rows; ++r)
          kernels::active<T>().axpy(T(1), gy.data() + r * length,
                                    gx.data() + r * cols + start, static_cast<size_t>(length));
      }
    });
  });
  return out;
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
  Tensor out = make_out({1}, x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    out.data<T>()[0] =
        kernels::active<T>().sum(x.data<T>().data(), static_cast<size_t>(x.numel()));
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage()]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      const T g = os->grad<T>()[0];
      auto gx = xs->grad<T>();
      for (auto& v : gx) v += g;
    });
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
  Tensor out = make_out({1}, x.dtype(), x.requires_grad());
  const int64_t n = x.numel();
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    out.data<T>()[0] = kernels::active<T>().sum(x.data<T>().data(), static_cast<size_t>(n)) /
                       static_cast<T>(n);
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage(), n]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      const T g = os->grad<T>()[0] / static_cast<T>(n);
      auto gx = xs->grad<T>();
      for (auto& v : gx) v += g;
    });
  });
  return out;
}

// ---- embedding ----

Tensor embedding(const Tensor& table, std::span<const int32_t> ids) {
  if (table.rank() != 2) throw std::invalid_argument("embedding: table must be [V x D]");
  const int64_t v = table.dim(0), d = table.dim(1);
  for (int32_t id : ids)
    if (id < 0 || id >= v)
      throw std::invalid_argument("embedding: id " + std::to_string(id) + " outside [0," +
                                  std::to_string(v) + ")");
  const int64_t l = static_cast<int64_t>(ids.size());
  Tensor out = make_out({l, d}, table.dtype(), table.requires_grad());
  auto idv = std::make_shared<std::vector<int32_t>>(ids.begin(), ids.end());
  dispatch_dtype(table.dtype(), [&]<typename T>() {
    auto src = table.data<T>();
    auto dst = out.data<T>();
    for (int64_t i = 0; i < l; ++i)
      std::copy(src.begin() + (*idv)[static_cast<size_t>(i)] * d,
                src.begin() + ((*idv)[static_cast<size_t>(i)] + 1) * d, dst.begin() + i * d);
  });
  maybe_record({table}, out, [ts = table.storage(), os = out.storage(), idv, d]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      auto gt = ts->grad<T>();
      for (size_t i = 0; i < idv->size(); ++i)
        kernels::active<T>().axpy(T(1), gy.data() + static_cast<int64_t>(i) * d,
                                  gt.data() + (*idv)[i] * d, static_cast<size_t>(d));
    });
  });
  return out;
}

// ---- index permutations ----

namespace {

// out[i] = in[src_of_dst[i]]
Tensor permutation_op(const Tensor& x, std::vector<int64_t> oshape,
                      std::shared_ptr<std::vector<int64_t>> src_of_dst, const char* /*name*/) {
  Tensor out = make_out(std::move(oshape), x.dtype(), x.requires_grad());
  dispatch_dtype(x.dtype(), [&]<typename T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = src[static_cast<size_t>((*src_of_dst)[i])];
  });
  maybe_record({x}, out, [xs = x.storage(), os = out.storage(), src_of_dst]() {
    dispatch_dtype(os->dtype, [&]<typename T>() {
      auto gy = os->grad<T>();
      auto gx = xs->grad<T>();
      for (size_t i = 0; i < gy.size(); ++i) gx[static_cast<size_t>((*src_of_dst)[i])] += gy[i];
    });
  });
  return out;
}

void require_chw(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw std::invalid_argument(std::string(op) + ": want [C,H,W], got " +
                                                 shape_str(x.shape()));
}

}  // namespace

Tensor patchify_tokens(const Tensor& chw, int64_t p) {
  require_chw(chw, "patchify");
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (p < 1 || h % p || w % p)
    throw ConfigError("patchify: latent " + shape_str(chw.shape()) +
                      " not divisible by patch " + std::to_string(p));
  const int64_t gh = h / p, gw = w / p, tokens = gh * gw, feat = p * p * c;
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(tokens * feat));
  for (int64_t r = 0; r < gh; ++r)
    for (int64_t cc = 0; cc < gw; ++cc)
      for (int64_t py = 0; py < p; ++py)
        for (int64_t px = 0; px < p; ++px)
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t tok = r * gw + cc;
            const int64_t f = (py * p + px) * c + ch;
            (*map)[static_cast<size_t>(tok * feat + f)] =
                ch * h * w + (r * p + py) * w + (cc * p + px);
          }
  return permutation_op(chw, {tokens, feat}, std::move(map), "patchify");
}

Tensor unpatchify_tokens(const Tensor& tokens, int64_t p, int64_t c, int64_t h, int64_t w) {
  if (tokens.rank() != 2) throw std::invalid_argument("unpatchify: want [T x F]");
  const int64_t gh = h / p, gw = w / p, feat = p * p * c;
  if (h % p || w % p || tokens.dim(0) != gh * gw || tokens.dim(1) != feat)
    throw ConfigError("unpatchify: tokens " + shape_str(tokens.shape()) +
                      " do not tile [" + std::to_string(c) + "," + std::to_string(h) + "," +
                      std::to_string(w) + "] with patch " + std::to_string(p));
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * h * w));
  for (int64_t r = 0; r < gh; ++r)
    for (int64_t cc = 0; cc < gw; ++cc)
      for (int64_t py = 0; py < p; ++py)
        for (int64_t px = 0; px < p; ++px)
          for (int64_t ch = 0; ch < c; ++ch) {
            const int64_t tok = r * gw + cc;
            const int64_t f = (py * p + px) * c + ch;
            (*map)[static_cast<size_t>(ch * h * w + (r * p + py) * w + (cc * p + px))] =
                tok * feat + f;
          }
  return permutation_op(tokens, {c, h, w}, std::move(map), "unpatchify");
}

Tensor space_to_depth(const Tensor& chw, int64_t b) {
  require_chw(chw, "space_to_depth");
  const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (b < 1 || h % b || w % b)
    throw ConfigError("space_to_depth: " + shape_str(chw.shape()) + " not divisible by block " +
                      std::to_string(b));
  const int64_t oh = h / b, ow = w / b, oc = c * b * b;
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * h * w));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t dy = 0; dy < b; ++dy)
      for (int64_t dx = 0; dx < b; ++dx)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) {
            const int64_t oci = ch * b * b + dy * b + dx;
            (*map)[static_cast<size_t>(oci * oh * ow + y * ow + x)] =
                ch * h * w + (y * b + dy) * w + (x * b + dx);
          }
  return permutation_op(chw, {oc, oh, ow}, std::move(map), "space_to_depth");
}

Tensor depth_to_space(const Tensor& cbhw, int64_t b) {
  require_chw(cbhw, "depth_to_space");
  const int64_t oc = cbhw.dim(0), oh = cbhw.dim(1), ow = cbhw.dim(2);
  if (b < 1 || oc % (b * b))
    throw ConfigError("depth_to_space: channels " + std::to_string(oc) +
                      " not divisible by block^2 " + std::to_string(b * b));
  const int64_t c = oc / (b * b), h = oh * b, w = ow * b;
  auto map = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(c * h * w));
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t dy = 0; dy < b; ++dy)
      for (int64_t dx = 0; dx < b; ++dx)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) {
            const int64_t ici = ch * b * b + dy * b + dx;
            (*map)[static_cast<size_t>(ch * h * w + (y * b + dy) * w + (x * b + dx))] =
                ici * oh * ow + y * ow + x;
          }
  return permutation_op(cbhw, {c, h, w}, std::move(map), "depth_to_space");
}

// ---- gradient check ----

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor xw = x.clone();
  xw.set_requires_grad(true);
  Tape::active().clear();
  Tensor loss = f(xw);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  backward(loss);
  std::vector<double> analytic(static_cast<size_t>(xw.numel()));
  for (int64_t i = 0; i < xw.numel(); ++i) analytic[static_cast<size_t>(i)] = xw.grad_at(i);

  NoGradGuard ng;
  double max_err = 0.0;
  Tensor probe = x.clone();
  for (int64_t i = 0; i < probe.numel(); ++i) {
    const double orig = probe.value_at(i);
    probe.set_value(i, orig + h);
    const double fp = f(probe).scalar();
    probe.set_value(i, orig - h);
    const double fm = f(probe).scalar();
    probe.set_value(i, orig);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite evaluation at coordinate " + std::to_string(i));
    const double num = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double err = std::abs(a - num) / (std::abs(a) + std::abs(num) + 1e-12);
    max_err = std::max(max_err, err);
  }
  return max_err;
}

// ---- TNSR1 ----

namespace {

void put_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tnsr1(std::ostream& os, const Tensor& t) {
  os.write("TNSR1", 5);
  const unsigned char dt = t.dtype() == DType::kF32 ? 0 : 1;
  const unsigned char rank = static_cast<unsigned char>(t.rank());
  os.put(static_cast<char>(dt));
  os.put(static_cast<char>(rank));
  for (int64_t e : t.shape()) put_u64_le(os, static_cast<uint64_t>(e));
  // payload little-endian; on LE hosts this is the raw buffer
  dispatch_dtype(t.dtype(), [&]<typename T>() {
    auto d = t.data<T>();
    os.write(reinterpret_cast<const char*>(d.data()),
             static_cast<std::streamsize>(d.size() * sizeof(T)));
  });
  if (!os) throw DataError("TNSR1: write failed");
}

Tensor read_tnsr1(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "TNSR1", 5) != 0) throw DataError("TNSR1: bad magic");
  const int dt = is.get();
  const int rank = is.get();
  if (dt != 0 && dt != 1) throw DataError("TNSR1: bad dtype code " + std::to_string(dt));
  if (rank < 0 || rank > 8) throw DataError("TNSR1: bad rank " + std::to_string(rank));
  std::vector<int64_t> shape(static_cast<size_t>(rank));
  for (auto& e : shape) e = static_cast<int64_t>(get_u64_le(is));
  Tensor t = Tensor::zeros(shape, dt == 0 ? DType::kF32 : DType::kF64);
  dispatch_dtype(t.dtype(), [&]<typename T>() {
    auto d = t.data<T>();
    is.read(reinterpret_cast<char*>(d.data()),
            static_cast<std::streamsize>(d.size() * sizeof(T)));
  });
  if (!is) throw DataError("TNSR1: truncated payload");
  return t;
}

void save_tnsr1(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("TNSR1: cannot open " + path + " for writing");
  write_tnsr1(os, t);
}

Tensor load_tnsr1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("TNSR1: cannot open " + path);
  return read_tnsr1(is);
}

}  // namespace progdit
