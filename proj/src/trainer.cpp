#include "progdit/trainer.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>

#include "progdit/errors.hpp"
#include "progdit/kernels.hpp"

namespace progdit {

void TrainConfig::validate() const {
  if (!(warmup_fraction > 0.0) || !(warmup_fraction < 1.0))
    throw ConfigError("trainer: warmup_fraction must be in (0,1)");
  if (total_steps < 1) throw ConfigError("trainer: total_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
  if (!(t0_fraction > 0.0) || !(t_mult >= 1.0))
    throw ConfigError("trainer: bad restart schedule");
  if (cond_drop_prob < 0.0 || cond_drop_prob > 1.0)
    throw ConfigError("trainer: cond_drop_prob must be in [0,1]");
  make_loss_weight(loss_weight);
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps)
    throw std::out_of_range("lr_at: step outside [0, total_steps]");
  const int64_t warmup = std::max<int64_t>(
      1, std::llround(cfg.warmup_fraction * static_cast<double>(cfg.total_steps)));
  if (step <= warmup)
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const int64_t post = std::max<int64_t>(1, cfg.total_steps - warmup);
  double tau = static_cast<double>(step - warmup);
  double cycle = std::max(1.0, std::floor(cfg.t0_fraction * static_cast<double>(post)));
  while (tau >= cycle) {
    tau -= cycle;
    cycle *= cfg.t_mult;
  }
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * tau / cycle));
}

std::function<double(int)> make_loss_weight(const std::string& name) {
  if (name == "constant") return [](int) { return 1.0; };
  throw ConfigError("trainer: unknown loss_weight '" + name + "'");
}

AdamW::AdamW(ParamStore& store, const TrainConfig& cfg) : store_(&store), cfg_(cfg) {
  for (auto& [name, t] : store.items()) {
    if (t.dtype() == DType::kF32) {
      m32_.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
      v32_.emplace_back(static_cast<size_t>(t.numel()), 0.0f);
      m64_.emplace_back();
      v64_.emplace_back();
    } else {
      m32_.emplace_back();
      v32_.emplace_back();
      m64_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
      v64_.emplace_back(static_cast<size_t>(t.numel()), 0.0);
    }
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1d = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2d = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  size_t i = 0;
  for (auto& [name, t] : store_->items()) {
    if (!t.has_grad()) {
      ++i;
      continue;
    }
    const size_t n = static_cast<size_t>(t.numel());
    if (t.dtype() == DType::kF32) {
      kernels::active<float>().adamw(
          t.data<float>().data(), t.grad<float>().data(), m32_[i].data(), v32_[i].data(), n,
          static_cast<float>(lr), static_cast<float>(cfg_.beta1), static_cast<float>(cfg_.beta2),
          static_cast<float>(cfg_.eps), static_cast<float>(cfg_.weight_decay),
          static_cast<float>(bc1d), static_cast<float>(bc2d));
    } else {
      kernels::active<double>().adamw(t.data<double>().data(), t.grad<double>().data(),
                                      m64_[i].data(), v64_[i].data(), n, lr, cfg_.beta1,
                                      cfg_.beta2, cfg_.eps, cfg_.weight_decay, bc1d, bc2d);
    }
    ++i;
  }
}

namespace {

void put_i64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

int64_t get_i64(std::istream& is) {
  int64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void AdamW::save_state(std::ostream& os) const {
  put_i64(os, t_);
  put_i64(os, static_cast<int64_t>(store_->size()));
  for (size_t i = 0; i < store_->size(); ++i) {
    if (!m32_[i].empty()) {
      put_i64(os, static_cast<int64_t>(m32_[i].size()));
      os.write(reinterpret_cast<const char*>(m32_[i].data()), m32_[i].size() * sizeof(float));
      os.write(reinterpret_cast<const char*>(v32_[i].data()), v32_[i].size() * sizeof(float));
    } else {
      put_i64(os, -static_cast<int64_t>(m64_[i].size()));
      os.write(reinterpret_cast<const char*>(m64_[i].data()), m64_[i].size() * sizeof(double));
      os.write(reinterpret_cast<const char*>(v64_[i].data()), v64_[i].size() * sizeof(double));
    }
  }
  if (!os) throw DataError("AdamW: state write failed");
}

void AdamW::load_state(std::istream& is) {
  t_ = get_i64(is);
  const int64_t count = get_i64(is);
  if (count != static_cast<int64_t>(store_->size()))
    throw DataError("AdamW: state has " + std::to_string(count) + " entries, store has " +
                    std::to_string(store_->size()));
  for (size_t i = 0; i < store_->size(); ++i) {
    const int64_t n = get_i64(is);
    if (n >= 0) {
      m32_[i].assign(static_cast<size_t>(n), 0.0f);
      v32_[i].assign(static_cast<size_t>(n), 0.0f);
      is.read(reinterpret_cast<char*>(m32_[i].data()),
              static_cast<std::streamsize>(m32_[i].size() * sizeof(float)));
      is.read(reinterpret_cast<char*>(v32_[i].data()),
              static_cast<std::streamsize>(v32_[i].size() * sizeof(float)));
    } else {
      m64_[i].assign(static_cast<size_t>(-n), 0.0);
      v64_[i].assign(static_cast<size_t>(-n), 0.0);
      is.read(reinterpret_cast<char*>(m64_[i].data()),
              static_cast<std::streamsize>(m64_[i].size() * sizeof(double)));
      is.read(reinterpret_cast<char*>(v64_[i].data()),
              static_cast<std::streamsize>(v64_[i].size() * sizeof(double)));
    }
  }
  if (!is) throw DataError("AdamW: state read failed");
}

}  // namespace progdit
