#include "progdit/params.hpp"

#include <istream>
#include <ostream>
#include <stdexcept>

#include "progdit/errors.hpp"

namespace progdit {

Tensor& ParamStore::declare(const std::string& name, std::vector<int64_t> shape, DType dt) {
  if (index_.count(name)) throw std::logic_error("ParamStore: duplicate parameter " + name);
  Tensor t = Tensor::zeros(std::move(shape), dt);
  t.set_requires_grad(true);
  index_[name] = items_.size();
  items_.emplace_back(name, std::move(t));
  return items_.back().second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
  return items_[it->second].second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::logic_error("ParamStore: unknown parameter " + name);
  return items_[it->second].second;
}

int64_t ParamStore::total_parameters() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : items_) t.zero_grad();
}

void fill_randn(Tensor& t, Rng& rng, double stddev) {
  for (int64_t i = 0; i < t.numel(); ++i) t.set_value(i, stddev * rng.normal());
}

void save_param_table(std::ostream& os, const ParamStore& store) {
  const uint64_t n = store.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& [name, t] : store.items()) {
    const uint32_t len = static_cast<uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&len), sizeof(len));
    os.write(name.data(), len);
    write_tnsr1(os, t);
  }
  if (!os) throw DataError("param table: write failed");
}

void load_param_table(std::istream& is, ParamStore& store) {
  uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!is || n != store.size())
    throw DataError("param table: entry count mismatch (file has " + std::to_string(n) +
                    ", expected " + std::to_string(store.size()) + ")");
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t len = 0;
    is.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw DataError("param table: truncated");
    Tensor loaded = read_tnsr1(is);
    Tensor& dst = store.at(name);
    if (loaded.shape() != dst.shape() || loaded.dtype() != dst.dtype())
      throw DataError("param table: shape/dtype mismatch for " + name);
    for (int64_t j = 0; j < dst.numel(); ++j) dst.set_value(j, loaded.value_at(j));
  }
}

}  // namespace progdit
