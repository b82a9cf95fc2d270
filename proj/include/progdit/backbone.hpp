#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "progdit/conditioning.hpp"
#include "progdit/params.hpp"
#include "progdit/tensor.hpp"

namespace progdit {

struct ModelConfig {
  int64_t depth = 4;
  int64_t hidden = 128;
  int64_t heads = 4;
  int64_t patch = 2;
  int64_t latent_channels = 4;
  int64_t latent_h = 16;
  int64_t latent_w = 16;
  double rope_base = 10000.0;
  CondConfig cond;

  int64_t head_dim() const { return hidden / heads; }
  int64_t grid_h() const { return latent_h / patch; }
  int64_t grid_w() const { return latent_w / patch; }
  int64_t tokens() const { return grid_h() * grid_w(); }
  void validate() const;

  static ModelConfig toy();
  // the published configuration: depth 40, hidden 1408, 16 heads, 32x32x4
  // latents, text contexts 77x1280 and 256x4096
  static ModelConfig full_scale();
};

// Axial 2-D rotary tables: per token, cos/sin for every in-head pair; the
// first half of each head's pairs carries the row phase, the second half the
// column phase.
struct RopeAngles {
  std::shared_ptr<std::vector<double>> cos_t;  // rows x (hidden/2)
  std::shared_ptr<std::vector<double>> sin_t;
  int64_t rows = 0;
  int64_t half = 0;  // hidden/2
};

RopeAngles rope_angles_for_grid(int64_t grid_h, int64_t grid_w, int64_t hidden, int64_t heads,
                                double base);
RopeAngles rope_angles_for_positions(const std::vector<std::pair<double, double>>& pos,
                                     int64_t hidden, int64_t heads, double base);

// rotate consecutive pairs of x [T x hidden] by the per-token angles;
// pair norms are preserved, position (0,0) is the identity
Tensor rope_rotate(const Tensor& x, const RopeAngles& angles);

// per-block parameter group (adaLN modulation, RoPE self-attention,
// cross-attention with zero-initialized residual gate, 4x feed-forward)
void declare_block_params(ParamStore& store, const ModelConfig& cfg, const std::string& prefix);
void init_block_params(ParamStore& store, const ModelConfig& cfg, const std::string& prefix,
                       Rng& rng);
Tensor dit_block_forward(const ParamStore& store, const ModelConfig& cfg,
                         const std::string& prefix, const Tensor& tokens,
                         const Tensor& c_global, const EncodedCondition& cond,
                         const RopeAngles& rope);

// DiT backbone over patchified latent tokens; v-prediction output has the
// latent's shape and is exactly zero at initialization
class DiffusionBackbone {
 public:
  DiffusionBackbone(const ModelConfig& cfg, ParamStore& store);
  void init_params(Rng& rng);

  Tensor forward(const Tensor& z, const Tensor& c_global, const EncodedCondition& cond) const;

  const ModelConfig& config() const { return cfg_; }
  const RopeAngles& rope() const { return rope_; }

 private:
  ModelConfig cfg_;
  ParamStore* store_;
  RopeAngles rope_;
};

// streaming construction of an arbitrary configuration: blocks are
// instantiated one at a time so the full-scale model fits in memory;
// reports the exact parameter count and verifies the output shape
struct ShapeCheckReport {
  int64_t total_params = 0;
  bool forward_ok = false;
  bool forward_attempted = false;
  std::vector<int64_t> out_shape;
  double seconds = 0.0;
  std::string note;
};

ShapeCheckReport run_shape_check(const ModelConfig& cfg, uint64_t seed, bool attempt_forward);

}  // namespace progdit
