#include "progdit/codec.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "progdit/errors.hpp"
#include "progdit/trainer.hpp"

namespace progdit {

Latent LatentCodec::encode_image(const Image& img) const {
  return encode(image_to_tensor(img, DType::kF64));
}

Image LatentCodec::decode_image(const Latent& z) const { return tensor_to_image(decode(z)); }

namespace {

Tensor replicate_gray(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 1)
    throw std::invalid_argument("codec: want [1,H,W] grayscale input");
  return concat({img, img, img, img}, 0);  // [4,H,W]
}

// sum over the replica channels; the fixed projections write each value into
// exactly one replica so this is the exact inverse of replicate_gray
Tensor collapse_sum(const Tensor& chw) {
  const int64_t h = chw.dim(1), w = chw.dim(2);
  Tensor flat = reshape(chw, {4, h * w});
  Tensor acc = narrow(flat, 0, 0, 1);
  for (int64_t c = 1; c < 4; ++c) acc = add(acc, narrow(flat, 0, c, 1));
  return reshape(acc, {1, h, w});
}

// orthonormal 2-D DCT-II basis vector (u,v) over a b x b block
std::vector<double> dct_basis(int64_t b, int64_t u, int64_t v) {
  std::vector<double> out(static_cast<size_t>(b * b));
  const double cu = u == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b);
  const double cv = v == 0 ? std::sqrt(1.0 / b) : std::sqrt(2.0 / b);
  for (int64_t y = 0; y < b; ++y)
    for (int64_t x = 0; x < b; ++x)
      out[static_cast<size_t>(y * b + x)] =
          cu * std::cos(std::numbers::pi * (2 * y + 1) * u / (2.0 * b)) * cv *
          std::cos(std::numbers::pi * (2 * x + 1) * v / (2.0 * b));
  return out;
}

void check_divisible(const Tensor& img, int64_t f) {
  if (img.dim(1) % f || img.dim(2) % f)
    throw ConfigError("codec: image " + std::to_string(img.dim(1)) + "x" +
                      std::to_string(img.dim(2)) + " not divisible by " + std::to_string(f));
}

// channel mix on [C,H,W]: w is [C x OC], bias [OC]; stays channel-major
Tensor channel_mix(const Tensor& chw, const Tensor& w, const Tensor& b) {
  const int64_t c = chw.dim(0), h = chw.dim(1), wd = chw.dim(2);
  Tensor y = matmul(w, reshape(chw, {c, h * wd}), /*trans_a=*/true, false);  // [OC, H*W]
  y = add_colvec(y, b);
  return reshape(y, {w.dim(1), h, wd});
}

}  // namespace

// ---- FixedCodec ----

FixedCodec::FixedCodec(int64_t block) : block_(block) {
  const int64_t in_ch = 4 * block_ * block_;
  proj_.assign(static_cast<size_t>(4 * in_ch), 0.0);
  if (block_ == 2) {
    // select the 2x2 pixels of replica 0: exactly invertible
    for (int64_t r = 0; r < 4; ++r) proj_[static_cast<size_t>(r * in_ch + r)] = 1.0;
  } else {
    // four lowest-frequency DCT vectors, read from replica 0
    const std::pair<int64_t, int64_t> keep[4] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int64_t r = 0; r < 4; ++r) {
      const auto basis = dct_basis(block_, keep[r].first, keep[r].second);
      for (int64_t i = 0; i < block_ * block_; ++i)
        proj_[static_cast<size_t>(r * in_ch + i)] = basis[static_cast<size_t>(i)];
    }
  }
}

FixedCodec FixedCodec::factor8() { return FixedCodec(8); }
FixedCodec FixedCodec::invertible2() { return FixedCodec(2); }

Tensor FixedCodec::forward_transform(const Tensor& img) const {
  check_divisible(img, block_);
  NoGradGuard ng;
  Tensor stacked = space_to_depth(replicate_gray(img), block_);  // [4b^2, H/b, W/b]
  const int64_t in_ch = stacked.dim(0), oh = stacked.dim(1), ow = stacked.dim(2);
  Tensor w = Tensor::from_values({4, in_ch}, proj_, img.dtype());
  Tensor z = matmul(w, reshape(stacked, {in_ch, oh * ow}));
  return reshape(z, {4, oh, ow});
}

Tensor FixedCodec::inverse_transform(const Tensor& latent) const {
  NoGradGuard ng;
  const int64_t oh = latent.dim(1), ow = latent.dim(2);
  const int64_t in_ch = 4 * block_ * block_;
  Tensor w = Tensor::from_values({4, in_ch}, proj_, latent.dtype());
  Tensor up = matmul(w, reshape(latent, {4, oh * ow}), /*trans_a=*/true, false);
  Tensor img4 = depth_to_space(reshape(up, {in_ch, oh, ow}), block_);
  return collapse_sum(img4);
}

Latent FixedCodec::encode(const Tensor& img) const {
  NoGradGuard ng;
  return Latent{scale(forward_transform(img), kLatentScale), true};
}

Tensor FixedCodec::decode(const Latent& z) const {
  if (!z.scaled) throw NumericError("codec: decode called on unscaled latent");
  NoGradGuard ng;
  Tensor raw = Tensor::zeros(z.data.shape(), z.data.dtype());
  for (int64_t i = 0; i < raw.numel(); ++i)
    raw.set_value(i, z.data.value_at(i) / kLatentScale);
  Tensor img = inverse_transform(raw);
  return image_to_tensor(tensor_to_image(img, /*clamp01=*/true), img.dtype());
}

// ---- TrainableCodec ----

TrainableCodec::TrainableCodec(int64_t c1, int64_t c2, DType dt, uint64_t init_seed)
    : c1_(c1), c2_(c2) {
  params_.set_dtype(dt);
  params_.declare("codec.e1_w", {16, c1}, dt);
  params_.declare("codec.e1_b", {c1}, dt);
  params_.declare("codec.e2_w", {4 * c1, c2}, dt);
  params_.declare("codec.e2_b", {c2}, dt);
  params_.declare("codec.e3_w", {4 * c2, 4}, dt);
  params_.declare("codec.e3_b", {4}, dt);
  params_.declare("codec.d3_w", {4, 4 * c2}, dt);
  params_.declare("codec.d3_b", {4 * c2}, dt);
  params_.declare("codec.d2_w", {c2, 4 * c1}, dt);
  params_.declare("codec.d2_b", {4 * c1}, dt);
  params_.declare("codec.d1_w", {c1, 16}, dt);
  params_.declare("codec.d1_b", {16}, dt);
  params_.declare("codec.cal_mean", {4}, dt).set_requires_grad(false);
  auto& gain = params_.declare("codec.cal_gain", {4}, dt);
  gain.set_requires_grad(false);
  for (int64_t i = 0; i < 4; ++i) gain.set_value(i, 1.0);
  Rng rng(init_seed);
  for (const char* n :
       {"codec.e1_w", "codec.e2_w", "codec.e3_w", "codec.d3_w", "codec.d2_w", "codec.d1_w"})
    fill_randn(params_.at(n), rng, 0.05);
}

Tensor TrainableCodec::encode_raw(const Tensor& img) const {
  check_divisible(img, 8);
  const auto& s = params_;
  Tensor x = replicate_gray(img);
  x = silu(channel_mix(space_to_depth(x, 2), s.at("codec.e1_w"), s.at("codec.e1_b")));
  x = silu(channel_mix(space_to_depth(x, 2), s.at("codec.e2_w"), s.at("codec.e2_b")));
  return channel_mix(space_to_depth(x, 2), s.at("codec.e3_w"), s.at("codec.e3_b"));
}

Tensor TrainableCodec::decode_raw(const Tensor& latent) const {
  const auto& s = params_;
  Tensor x = silu(depth_to_space(channel_mix(latent, s.at("codec.d3_w"), s.at("codec.d3_b")), 2));
  x = silu(depth_to_space(channel_mix(x, s.at("codec.d2_w"), s.at("codec.d2_b")), 2));
  x = depth_to_space(channel_mix(x, s.at("codec.d1_w"), s.at("codec.d1_b")), 2);
  // mean over replica channels
  const int64_t h = x.dim(1), w = x.dim(2);
  Tensor flat = reshape(x, {4, h * w});
  Tensor acc = narrow(flat, 0, 0, 1);
  for (int64_t c = 1; c < 4; ++c) acc = add(acc, narrow(flat, 0, c, 1));
  return reshape(scale(acc, 0.25), {1, h, w});
}

Latent TrainableCodec::encode(const Tensor& img) const {
  NoGradGuard ng;
  Tensor raw = encode_raw(img);
  const auto& mean = params_.at("codec.cal_mean");
  const auto& gain = params_.at("codec.cal_gain");
  const int64_t hw = raw.dim(1) * raw.dim(2);
  Tensor out = Tensor::zeros(raw.shape(), raw.dtype());
  for (int64_t c = 0; c < 4; ++c) {
    const double mu = mean.value_at(c), g = gain.value_at(c);
    for (int64_t i = 0; i < hw; ++i) {
      const double v = (raw.value_at(c * hw + i) - mu) * g;
      out.set_value(c * hw + i, v * kLatentScale);
    }
  }
  return Latent{out, true};
}

Tensor TrainableCodec::decode(const Latent& z) const {
  if (!z.scaled) throw NumericError("codec: decode called on unscaled latent");
  NoGradGuard ng;
  const auto& mean = params_.at("codec.cal_mean");
  const auto& gain = params_.at("codec.cal_gain");
  const int64_t hw = z.data.dim(1) * z.data.dim(2);
  Tensor raw = Tensor::zeros(z.data.shape(), z.data.dtype());
  for (int64_t c = 0; c < 4; ++c) {
    const double mu = mean.value_at(c), g = gain.value_at(c);
    for (int64_t i = 0; i < hw; ++i) {
      const double v = z.data.value_at(c * hw + i) / kLatentScale;
      raw.set_value(c * hw + i, v / g + mu);
    }
  }
  Tensor img = decode_raw(raw);
  return image_to_tensor(tensor_to_image(img, /*clamp01=*/true), img.dtype());
}

CodecTrainResult TrainableCodec::train(const std::vector<Tensor>& images,
                                       const CodecTrainConfig& cfg) {
  if (images.empty()) throw DataError("codec train: no images");
  TrainConfig tc;
  tc.base_lr = cfg.lr;
  tc.weight_decay = cfg.weight_decay;
  tc.total_steps = cfg.steps;
  AdamW opt(params_, tc);
  Rng rng(cfg.seed);
  CodecTrainResult res;

  // last finite parameter snapshot, restored if the loss diverges
  std::vector<Tensor> snapshot;
  auto take_snapshot = [&]() {
    snapshot.clear();
    for (auto& [n, t] : params_.items()) snapshot.push_back(t.clone());
  };
  auto restore_snapshot = [&]() {
    size_t i = 0;
    for (auto& [n, t] : params_.items()) {
      auto src = snapshot[i++];
      for (int64_t j = 0; j < t.numel(); ++j) t.set_value(j, src.value_at(j));
    }
  };
  take_snapshot();

  double last = 0.0;
  for (int step = 1; step <= cfg.steps; ++step) {
    Tape::active().clear();
    params_.zero_grads();
    Tensor loss;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& img = images[rng.uniform_index(images.size())];
      Tensor rec = decode_raw(encode_raw(img));
      Tensor diff = sub(rec, img);
      Tensor l = scale(mean_all(mul(diff, diff)), 1.0 / cfg.batch);
      loss = loss.defined() ? add(loss, l) : l;
    }
    last = loss.scalar();
    if (!std::isfinite(last)) {
      restore_snapshot();
      throw NumericError("codec train: loss diverged at step " + std::to_string(step) +
                         "; last finite checkpoint retained");
    }
    backward(loss);
    opt.step(cfg.lr);
    if (step % cfg.log_every == 0 || step == 1) res.loss_log.emplace_back(step, last);
    if (step % 50 == 0) take_snapshot();
  }
  res.final_mse = last;
  return res;
}

void TrainableCodec::calibrate(const std::vector<Tensor>& images) {
  if (images.empty()) throw DataError("codec calibrate: no images");
  NoGradGuard ng;
  double sum[4] = {0, 0, 0, 0}, sumsq[4] = {0, 0, 0, 0};
  int64_t count = 0;
  for (const auto& img : images) {
    Tensor raw = encode_raw(img);
    const int64_t hw = raw.dim(1) * raw.dim(2);
    for (int64_t c = 0; c < 4; ++c)
      for (int64_t i = 0; i < hw; ++i) {
        const double v = raw.value_at(c * hw + i);
        sum[c] += v;
        sumsq[c] += v * v;
      }
    count += raw.dim(1) * raw.dim(2);
  }
  auto& mean = params_.at("codec.cal_mean");
  auto& gain = params_.at("codec.cal_gain");
  for (int64_t c = 0; c < 4; ++c) {
    const double mu = sum[c] / static_cast<double>(count);
    const double var = sumsq[c] / static_cast<double>(count) - mu * mu;
    const double sd = std::sqrt(std::max(var, 1e-12));
    mean.set_value(c, mu);
    // scaled latents land near unit variance: gain * kLatentScale = 1/sd
    gain.set_value(c, 1.0 / (sd * kLatentScale));
  }
}

std::pair<std::vector<double>, std::vector<double>> TrainableCodec::latent_stats() const {
  std::vector<double> mu(4), sd(4);
  for (int64_t c = 0; c < 4; ++c) {
    mu[static_cast<size_t>(c)] = params_.at("codec.cal_mean").value_at(c);
    sd[static_cast<size_t>(c)] =
        1.0 / (params_.at("codec.cal_gain").value_at(c) * kLatentScale);
  }
  return {mu, sd};
}

void TrainableCodec::save(std::ostream& os) const {
  os.write("PDCD1", 5);
  const int64_t meta[3] = {c1_, c2_, params_.dtype() == DType::kF32 ? 0 : 1};
  os.write(reinterpret_cast<const char*>(meta), sizeof(meta));
  save_param_table(os, params_);
}

TrainableCodec TrainableCodec::load(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "PDCD1", 5) != 0) throw DataError("codec: bad magic");
  int64_t meta[3];
  is.read(reinterpret_cast<char*>(meta), sizeof(meta));
  TrainableCodec codec(meta[0], meta[1], meta[2] == 0 ? DType::kF32 : DType::kF64, 0);
  load_param_table(is, codec.params_);
  return codec;
}

void TrainableCodec::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("codec: cannot write " + path);
  save(os);
}

TrainableCodec TrainableCodec::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("codec: cannot open " + path);
  return load(is);
}

double codec_reconstruction_mse(const LatentCodec& codec, const std::vector<Tensor>& images) {
  NoGradGuard ng;
  double total = 0.0;
  for (const auto& img : images) {
    Tensor rec = codec.decode(codec.encode(img));
    double mse = 0.0;
    for (int64_t i = 0; i < img.numel(); ++i) {
      const double d = rec.value_at(i) - img.value_at(i);
      mse += d * d;
    }
    total += mse / static_cast<double>(img.numel());
  }
  return total / static_cast<double>(images.size());
}

}  // namespace progdit
