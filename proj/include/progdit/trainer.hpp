#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "progdit/params.hpp"
#include "progdit/schedule.hpp"
#include "progdit/tensor.hpp"

namespace progdit {

struct TrainConfig {
  double base_lr = 5e-5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t total_steps = 2000;
  double warmup_fraction = 0.05;
  // cosine warm restarts: first cycle is t0_fraction of the post-warmup
  // steps, each restart multiplies the cycle length by t_mult
  double t0_fraction = 0.25;
  double t_mult = 2.0;
  int64_t batch_size = 32;
  double cond_drop_prob = 0.1;
  std::string loss_weight = "constant";  // w(t) hook selector
  uint64_t seed = 0;
  int64_t checkpoint_every = 500;

  void validate() const;
};

// linear warmup to base_lr, then cosine annealing with warm restarts
double lr_at(int64_t step, const TrainConfig& cfg);

// w(t) hook; "constant" returns 1 for every t
std::function<double(int)> make_loss_weight(const std::string& name);

// decoupled-weight-decay Adam over a ParamStore; moments in parameter dtype
class AdamW {
 public:
  AdamW(ParamStore& store, const TrainConfig& cfg);

  // applies one update from the accumulated gradients; params without a
  // gradient buffer are left untouched
  void step(double lr);
  int64_t step_count() const { return t_; }

  // state serialization (moment blobs in declaration order + step counter)
  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

 private:
  ParamStore* store_;
  TrainConfig cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<float>> m32_, v32_;
  std::vector<std::vector<double>> m64_, v64_;
};

}  // namespace progdit
