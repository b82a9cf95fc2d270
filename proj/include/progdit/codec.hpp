#pragma once

#include <memory>
#include <string>
#include <vector>

#include "progdit/image.hpp"
#include "progdit/params.hpp"
#include "progdit/tensor.hpp"

namespace progdit {

struct Latent {
  Tensor data;          // [4, H/f, W/f]
  bool scaled = false;  // 0.13025 applied exactly once
};

// image <-> latent transform; encode applies the 0.13025 latent scale,
// decode removes it first
class LatentCodec {
 public:
  static constexpr double kLatentScale = 0.13025;
  static constexpr int64_t kLatentChannels = 4;

  virtual ~LatentCodec() = default;
  virtual Latent encode(const Tensor& img_1hw) const = 0;
  virtual Tensor decode(const Latent& z) const = 0;  // [1,H,W], clamped to [0,1]
  virtual std::string kind() const = 0;
  virtual int64_t spatial_factor() const = 0;

  Latent encode_image(const Image& img) const;
  Image decode_image(const Latent& z) const;
};

// Deterministic test codec: grayscale replicated to 4 channels,
// space-to-depth, then a fixed orthonormal projection to 4 channels.
//   block 8: rows are the four lowest 2-D DCT basis vectors (factor 8, lossy)
//   block 2: rows select the 2x2 block pixels exactly (reduced factor,
//            structurally invertible; only the scale/unscale pair rounds)
class FixedCodec : public LatentCodec {
 public:
  static FixedCodec factor8();
  static FixedCodec invertible2();

  Latent encode(const Tensor& img_1hw) const override;
  Tensor decode(const Latent& z) const override;
  std::string kind() const override { return block_ == 2 ? "fixed2" : "fixed8"; }
  int64_t spatial_factor() const override { return block_; }

  // structural transform without the latent scale, for exactness tests
  Tensor forward_transform(const Tensor& img_1hw) const;
  Tensor inverse_transform(const Tensor& latent) const;

 private:
  explicit FixedCodec(int64_t block);
  int64_t block_;
  std::vector<double> proj_;  // 4 x (4*block^2), orthonormal rows
};

struct CodecTrainConfig {
  int steps = 2500;
  int batch = 16;
  double lr = 2e-3;
  double weight_decay = 0.0;
  uint64_t seed = 0;
  int log_every = 250;
};

struct CodecTrainResult {
  std::vector<std::pair<int, double>> loss_log;
  double final_mse = 0.0;
};

// Three stride-2 stages of learnable linear maps over 2x2 neighborhoods with
// SiLU between stages (deterministic autoencoder, MSE objective). After
// training, per-channel statistics are folded into a calibration affine so
// the scaled latents come out near zero mean / unit variance; the recorded
// stats let the 0.13025 analog be recomputed.
class TrainableCodec : public LatentCodec {
 public:
  TrainableCodec(int64_t c1, int64_t c2, DType dt, uint64_t init_seed);
  TrainableCodec() : TrainableCodec(32, 64, DType::kF32, 1) {}

  Latent encode(const Tensor& img_1hw) const override;
  Tensor decode(const Latent& z) const override;
  std::string kind() const override { return "trainable"; }
  int64_t spatial_factor() const override { return 8; }

  // differentiable paths (no calibration, no scale) used by training
  Tensor encode_raw(const Tensor& img_1hw) const;
  Tensor decode_raw(const Tensor& latent_raw) const;

  CodecTrainResult train(const std::vector<Tensor>& images, const CodecTrainConfig& cfg);
  // measure per-channel latent stats on a sample and fold them into the
  // calibration so that encode() output is standardized
  void calibrate(const std::vector<Tensor>& images);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::pair<std::vector<double>, std::vector<double>> latent_stats() const;

  void save(const std::string& path) const;
  static TrainableCodec load(const std::string& path);
  void save(std::ostream& os) const;
  static TrainableCodec load(std::istream& is);

 private:
  int64_t c1_, c2_;
  ParamStore params_;
};

// reconstruction MSE over a set of images (used by codec tests and training QA)
double codec_reconstruction_mse(const LatentCodec& codec, const std::vector<Tensor>& images);

}  // namespace progdit
