#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "progdit/tensor.hpp"

namespace progdit {

// Named parameter table with stable iteration order (declaration order).
// Checkpoints serialize it as TNSR1 blobs plus a name/shape manifest.
class ParamStore {
 public:
  Tensor& declare(const std::string& name, std::vector<int64_t> shape, DType dt);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  size_t size() const { return items_.size(); }
  int64_t total_parameters() const;
  DType dtype() const { return dtype_; }
  void set_dtype(DType dt) { dtype_ = dt; }

  void zero_grads();

 private:
  DType dtype_ = DType::kF64;
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// gaussian init in declaration order; zero-initialized entries stay zero
void fill_randn(Tensor& t, Rng& rng, double stddev);

// name + TNSR1 blob per entry; load targets must already be declared with
// matching shapes and dtypes
void save_param_table(std::ostream& os, const ParamStore& store);
void load_param_table(std::istream& is, ParamStore& store);

}  // namespace progdit
