#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "progdit/rng.hpp"

namespace progdit {

enum class DType : uint8_t { kF32 = 0, kF64 = 1 };

inline size_t dtype_size(DType dt) { return dt == DType::kF32 ? 4 : 8; }
std::string dtype_name(DType dt);

namespace detail {

struct Storage {
  DType dtype = DType::kF64;
  std::vector<int64_t> shape;
  int64_t numel = 0;
  std::vector<float> f32;
  std::vector<double> f64;
  bool requires_grad = false;
  std::vector<float> grad32;
  std::vector<double> grad64;

  template <typename T>
  std::span<T> data();
  template <typename T>
  std::span<const T> cdata() const;
  // lazily allocates a zero gradient buffer
  template <typename T>
  std::span<T> grad();
  bool has_grad() const;
  void drop_grad();
};

}  // namespace detail

// Dense row-major tensor, f32 or f64, with optional reverse-mode gradient.
// Value-semantic handle: copies share storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int64_t> shape, DType dt = DType::kF64);
  static Tensor full(std::vector<int64_t> shape, double value, DType dt = DType::kF64);
  static Tensor from_values(std::vector<int64_t> shape, std::span<const double> values,
                            DType dt = DType::kF64);
  static Tensor randn(std::vector<int64_t> shape, Rng& rng, double stddev,
                      DType dt = DType::kF64);

  bool defined() const { return s_ != nullptr; }
  const std::vector<int64_t>& shape() const { return s_->shape; }
  int64_t numel() const { return s_ ? s_->numel : 0; }
  int64_t dim(size_t i) const { return s_->shape.at(i); }
  size_t rank() const { return s_->shape.size(); }
  DType dtype() const { return s_->dtype; }

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    s_->requires_grad = v;
    return *this;
  }

  template <typename T>
  std::span<T> data() {
    return s_->data<T>();
  }
  template <typename T>
  std::span<const T> data() const {
    return std::as_const(*s_).cdata<T>();
  }

  // dtype-agnostic element access (reads/writes as double)
  double value_at(int64_t flat) const;
  void set_value(int64_t flat, double v);
  double scalar() const;  // requires numel()==1
  std::vector<double> to_vector() const;

  bool has_grad() const { return s_ && s_->has_grad(); }
  template <typename T>
  std::span<T> grad() {
    return s_->grad<T>();
  }
  double grad_at(int64_t flat) const;
  void zero_grad();

  // deep copy (does not copy gradient, detached from the tape)
  Tensor clone() const;
  // same storage viewed under a new shape (numel must match)
  Tensor view_as(std::vector<int64_t> shape) const;

  std::shared_ptr<detail::Storage> storage() const { return s_; }
  static Tensor wrap(std::shared_ptr<detail::Storage> s) {
    Tensor t;
    t.s_ = std::move(s);
    return t;
  }

 private:
  std::shared_ptr<detail::Storage> s_;
};

// Recording tape. Ops append nodes in execution order (inputs always precede
// their consumers); backward() replays it in reverse once, then frees it.
class Tape {
 public:
  struct Node {
    std::vector<std::shared_ptr<detail::Storage>> inputs;
    std::shared_ptr<detail::Storage> output;
    std::function<void()> backward;
  };

  static Tape& active();
  static bool recording();

  void record(std::vector<std::shared_ptr<detail::Storage>> inputs,
              std::shared_ptr<detail::Storage> output, std::function<void()> backward);
  void clear();
  size_t size() const { return nodes_.size(); }

  friend void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
};

// disables tape recording within the current scope (nestable)
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// seeds d(loss)/d(loss)=1, sweeps the tape once in reverse accumulating into
// requires_grad leaves, then frees the tape
void backward(const Tensor& loss);

// ---- differentiable ops ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// x: [R x C], v: [C]; broadcast over rows
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);
// x: [R x C], v: [R]; v[r] added to every entry of row r
Tensor add_colvec(const Tensor& x, const Tensor& v);
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, double eps);
Tensor silu(const Tensor& x);
// elementwise natural log; inputs must be positive
Tensor log(const Tensor& x);
Tensor reshape(const Tensor& x, std::vector<int64_t> shape);
Tensor concat(const std::vector<Tensor>& parts, size_t dim);
Tensor narrow(const Tensor& x, size_t dim, int64_t start, int64_t length);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// rows of table selected by ids -> [ids.size() x D]
Tensor embedding(const Tensor& table, std::span<const int32_t> ids);
// [C,H,W] -> [(H/p)*(W/p), p*p*C] and back; pure index permutations
Tensor patchify_tokens(const Tensor& chw, int64_t p);
Tensor unpatchify_tokens(const Tensor& tokens, int64_t p, int64_t c, int64_t h, int64_t w);
// [C,H,W] -> [C*b*b, H/b, W/b] and back
Tensor space_to_depth(const Tensor& chw, int64_t b);
Tensor depth_to_space(const Tensor& cbhw, int64_t b);

// max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12)
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

// ---- TNSR1 serialization ----
// magic "TNSR1", dtype u8 (0=f32, 1=f64), rank u8, extents LE u64, payload LE
void write_tnsr1(std::ostream& os, const Tensor& t);
Tensor read_tnsr1(std::istream& is);
void save_tnsr1(const std::string& path, const Tensor& t);
Tensor load_tnsr1(const std::string& path);

}  // namespace progdit
