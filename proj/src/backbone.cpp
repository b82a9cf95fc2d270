#include "progdit/backbone.hpp"

#include <chrono>
#include <cmath>

#include "progdit/errors.hpp"

namespace progdit {

void ModelConfig::validate() const {
  if (hidden % heads)
    throw ConfigError("ModelConfig: hidden " + std::to_string(hidden) +
                      " not divisible by heads " + std::to_string(heads));
  if (head_dim() % 4)
    throw ConfigError("ModelConfig: head_dim " + std::to_string(head_dim()) +
                      " must be divisible by 4 (axial rotary pairs)");
  if (latent_h % patch || latent_w % patch)
    throw ConfigError("ModelConfig: latent " + std::to_string(latent_h) + "x" +
                      std::to_string(latent_w) + " not divisible by patch " +
                      std::to_string(patch));
  if (depth < 1) throw ConfigError("ModelConfig: depth must be >= 1");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
  ModelConfig cfg;
  cfg.depth = 40;
  cfg.hidden = 1408;
  cfg.heads = 16;
  cfg.patch = 2;
  cfg.latent_channels = 4;
  cfg.latent_h = 32;
  cfg.latent_w = 32;
  cfg.cond.clip_dim = 1280;
  cfg.cond.clip_len = 77;
  cfg.cond.t5_dim = 4096;
  cfg.cond.t5_len = 256;
  return cfg;
}

// ---- rotary tables ----

namespace {

RopeAngles make_angles(const std::vector<std::pair<double, double>>& pos, int64_t hidden,
                       int64_t heads, double base) {
  const int64_t d = hidden / heads;
  if (d % 4) throw ConfigError("rope: head_dim must be divisible by 4");
  const int64_t pairs_per_axis = d / 4;
  const int64_t half = hidden / 2;
  const int64_t rows = static_cast<int64_t>(pos.size());
  RopeAngles a;
  a.rows = rows;
  a.half = half;
  a.cos_t = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * half));
  a.sin_t = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * half));
  // frequency ladder shared by both axes: base^(-2i / (d/2))
  std::vector<double> freqs(static_cast<size_t>(pairs_per_axis));
  for (int64_t i = 0; i < pairs_per_axis; ++i)
    freqs[static_cast<size_t>(i)] =
        std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d / 2));
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t h = 0; h < heads; ++h) {
      for (int64_t i = 0; i < pairs_per_axis * 2; ++i) {
        const bool row_axis = i < pairs_per_axis;
        const double p = row_axis ? pos[static_cast<size_t>(r)].first
                                  : pos[static_cast<size_t>(r)].second;
        const double w = freqs[static_cast<size_t>(row_axis ? i : i - pairs_per_axis)];
        const double ang = p * w;
        const size_t idx = static_cast<size_t>(r * half + h * (d / 2) + i);
        (*a.cos_t)[idx] = std::cos(ang);
        (*a.sin_t)[idx] = std::sin(ang);
      }
    }
  }
  return a;
}

}  // namespace

RopeAngles rope_angles_for_grid(int64_t grid_h, int64_t grid_w, int64_t hidden, int64_t heads,
                                double base) {
  std::vector<std::pair<double, double>> pos;
  pos.reserve(static_cast<size_t>(grid_h * grid_w));
  for (int64_t r = 0; r < grid_h; ++r)
    for (int64_t c = 0; c < grid_w; ++c) pos.emplace_back(static_cast<double>(r),
                                                          static_cast<double>(c));
  return make_angles(pos, hidden, heads, base);
}

RopeAngles rope_angles_for_positions(const std::vector<std::pair<double, double>>& pos,
                                     int64_t hidden, int64_t heads, double base) {
  return make_angles(pos, hidden, heads, base);
}

Tensor rope_rotate(const Tensor& x, const RopeAngles& angles) {
  if (x.rank() != 2 || x.dim(0) != angles.rows || x.dim(1) != angles.half * 2)
    throw std::invalid_argument("rope_rotate: x must be [" + std::to_string(angles.rows) + " x " +
                                std::to_string(angles.half * 2) + "]");
  const int64_t rows = angles.rows, half = angles.half;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  out.set_requires_grad(x.requires_grad());
  auto cs = angles.cos_t;
  auto sn = angles.sin_t;
  const bool f32 = x.dtype() == DType::kF32;
  auto rotate = [&](auto xspan, auto ospan, bool inverse) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < half; ++i) {
        const double c = (*cs)[static_cast<size_t>(r * half + i)];
        const double s = inverse ? -(*sn)[static_cast<size_t>(r * half + i)]
                                 : (*sn)[static_cast<size_t>(r * half + i)];
        const auto x0 = xspan[static_cast<size_t>(r * 2 * half + 2 * i)];
        const auto x1 = xspan[static_cast<size_t>(r * 2 * half + 2 * i + 1)];
        ospan[static_cast<size_t>(r * 2 * half + 2 * i)] =
            static_cast<std::remove_reference_t<decltype(ospan[0])>>(x0 * c - x1 * s);
        ospan[static_cast<size_t>(r * 2 * half + 2 * i + 1)] =
            static_cast<std::remove_reference_t<decltype(ospan[0])>>(x0 * s + x1 * c);
      }
  };
  if (f32)
    rotate(x.data<float>(), out.data<float>(), false);
  else
    rotate(x.data<double>(), out.data<double>(), false);

  if (Tape::recording() && out.requires_grad()) {
    Tape::active().record(
        {x.storage()}, out.storage(), [xs = x.storage(), os = out.storage(), cs, sn, rows,
                                       half]() {
          // gradient rotates back by -theta
          auto apply = [&](auto gy, auto gx) {
            for (int64_t r = 0; r < rows; ++r)
              for (int64_t i = 0; i < half; ++i) {
                const double c = (*cs)[static_cast<size_t>(r * half + i)];
                const double s = (*sn)[static_cast<size_t>(r * half + i)];
                const auto g0 = gy[static_cast<size_t>(r * 2 * half + 2 * i)];
                const auto g1 = gy[static_cast<size_t>(r * 2 * half + 2 * i + 1)];
                gx[static_cast<size_t>(r * 2 * half + 2 * i)] +=
                    static_cast<std::remove_reference_t<decltype(gx[0])>>(g0 * c + g1 * s);
                gx[static_cast<size_t>(r * 2 * half + 2 * i + 1)] +=
                    static_cast<std::remove_reference_t<decltype(gx[0])>>(-g0 * s + g1 * c);
              }
          };
          if (os->dtype == DType::kF32)
            apply(os->grad<float>(), xs->grad<float>());
          else
            apply(os->grad<double>(), xs->grad<double>());
        });
  }
  return out;
}

// ---- block ----

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// h * (1 + scale) + shift, broadcast over rows
Tensor modulate(const Tensor& h, const Tensor& shift, const Tensor& scale_vec) {
  return add_rowvec(add(h, mul_rowvec(h, scale_vec)), shift);
}

Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, int64_t heads,
                           const Tensor* key_bias) {
  const int64_t d = q.dim(1) / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int64_t h = 0; h < heads; ++h) {
    Tensor qh = narrow(q, 1, h * d, d);
    Tensor kh = narrow(k, 1, h * d, d);
    Tensor vh = narrow(v, 1, h * d, d);
    Tensor logits = scale(matmul(qh, kh, false, true), inv_sqrt_d);
    if (key_bias) logits = add_rowvec(logits, *key_bias);
    outs.push_back(matmul(softmax_lastdim(logits), vh));
  }
  return concat(outs, 1);
}

}  // namespace

void declare_block_params(ParamStore& store, const ModelConfig& cfg, const std::string& p) {
  const DType dt = store.dtype();
  const int64_t h = cfg.hidden, dc = cfg.cond.clip_dim;
  store.declare(p + "ada_w", {h, 6 * h}, dt);  // adaLN-Zero: stays zero at init
  store.declare(p + "ada_b", {6 * h}, dt);
  store.declare(p + "qkv_w", {h, 3 * h}, dt);
  store.declare(p + "qkv_b", {3 * h}, dt);
  store.declare(p + "att_o_w", {h, h}, dt);
  store.declare(p + "att_o_b", {h}, dt);
  store.declare(p + "xq_w", {h, h}, dt);
  store.declare(p + "xq_b", {h}, dt);
  store.declare(p + "xk_w", {dc, h}, dt);
  store.declare(p + "xk_b", {h}, dt);
  store.declare(p + "xv_w", {dc, h}, dt);
  store.declare(p + "xv_b", {h}, dt);
  store.declare(p + "xo_w", {h, h}, dt);
  store.declare(p + "xo_b", {h}, dt);
  store.declare(p + "xgate", {h}, dt);  // zero: cross-attention off at init
  store.declare(p + "ff1_w", {h, 4 * h}, dt);
  store.declare(p + "ff1_b", {4 * h}, dt);
  store.declare(p + "ff2_w", {4 * h, h}, dt);
  store.declare(p + "ff2_b", {h}, dt);
}

void init_block_params(ParamStore& store, const ModelConfig& /*cfg*/, const std::string& p,
                       Rng& rng) {
  for (const char* n : {"qkv_w", "att_o_w", "xq_w", "xk_w", "xv_w", "xo_w", "ff1_w", "ff2_w"})
    fill_randn(store.at(p + n), rng, 0.02);
}

Tensor dit_block_forward(const ParamStore& s, const ModelConfig& cfg, const std::string& p,
                         const Tensor& tokens, const Tensor& c_global,
                         const EncodedCondition& cond, const RopeAngles& rope) {
  const int64_t h = cfg.hidden;
  Tensor mod = add_rowvec(matmul(reshape(silu(c_global), {1, h}), s.at(p + "ada_w")),
                          s.at(p + "ada_b"));
  mod = reshape(mod, {6 * h});
  Tensor sh_a = narrow(mod, 0, 0, h);
  Tensor sc_a = narrow(mod, 0, h, h);
  Tensor g_a = narrow(mod, 0, 2 * h, h);
  Tensor sh_f = narrow(mod, 0, 3 * h, h);
  Tensor sc_f = narrow(mod, 0, 4 * h, h);
  Tensor g_f = narrow(mod, 0, 5 * h, h);

  // self-attention, RoPE on Q and K
  Tensor x = tokens;
  Tensor hmod = modulate(layer_norm(x, 1e-6), sh_a, sc_a);
  Tensor qkv = linear(hmod, s.at(p + "qkv_w"), s.at(p + "qkv_b"));
  Tensor q = rope_rotate(narrow(qkv, 1, 0, h), rope);
  Tensor k = rope_rotate(narrow(qkv, 1, h, h), rope);
  Tensor v = narrow(qkv, 1, 2 * h, h);
  Tensor att = multihead_attention(q, k, v, cfg.heads, nullptr);
  x = add(x, mul_rowvec(linear(att, s.at(p + "att_o_w"), s.at(p + "att_o_b")), g_a));

  // cross-attention: RoPE only on the image queries, text K/V unrotated
  Tensor hx = layer_norm(x, 1e-6);
  Tensor xq = rope_rotate(linear(hx, s.at(p + "xq_w"), s.at(p + "xq_b")), rope);
  Tensor xk = linear(cond.fused, s.at(p + "xk_w"), s.at(p + "xk_b"));
  Tensor xv = linear(cond.fused, s.at(p + "xv_w"), s.at(p + "xv_b"));
  std::vector<double> bias(cond.key_mask.size());
  for (size_t i = 0; i < bias.size(); ++i) bias[i] = cond.key_mask[i] > 0.5 ? 0.0 : -1e30;
  Tensor key_bias =
      Tensor::from_values({static_cast<int64_t>(bias.size())}, bias, tokens.dtype());
  Tensor xatt = multihead_attention(xq, xk, xv, cfg.heads, &key_bias);
  x = add(x, mul_rowvec(linear(xatt, s.at(p + "xo_w"), s.at(p + "xo_b")), s.at(p + "xgate")));

  // feed-forward
  Tensor hf = modulate(layer_norm(x, 1e-6), sh_f, sc_f);
  Tensor ff = linear(silu(linear(hf, s.at(p + "ff1_w"), s.at(p + "ff1_b"))),
                     s.at(p + "ff2_w"), s.at(p + "ff2_b"));
  return add(x, mul_rowvec(ff, g_f));
}

// ---- backbone ----

DiffusionBackbone::DiffusionBackbone(const ModelConfig& cfg, ParamStore& store)
    : cfg_(cfg), store_(&store) {
  cfg_.validate();
  const DType dt = store.dtype();
  const int64_t h = cfg_.hidden, pf = cfg_.patch * cfg_.patch * cfg_.latent_channels;
  store.declare("patch.w", {pf, h}, dt);
  store.declare("patch.b", {h}, dt);
  for (int64_t i = 0; i < cfg_.depth; ++i)
    declare_block_params(store, cfg_, "blk" + std::to_string(i) + ".");
  store.declare("final.mod_w", {h, 2 * h}, dt);  // zero-init
  store.declare("final.mod_b", {2 * h}, dt);
  store.declare("final.w", {h, pf}, dt);  // zero-init
  store.declare("final.b", {pf}, dt);
  rope_ = rope_angles_for_grid(cfg_.grid_h(), cfg_.grid_w(), h, cfg_.heads, cfg_.rope_base);
}

void DiffusionBackbone::init_params(Rng& rng) {
  fill_randn(store_->at("patch.w"), rng, 0.02);
  for (int64_t i = 0; i < cfg_.depth; ++i)
    init_block_params(*store_, cfg_, "blk" + std::to_string(i) + ".", rng);
  // final.mod_* and final.* stay zero so the fresh model is the zero map
}

Tensor DiffusionBackbone::forward(const Tensor& z, const Tensor& c_global,
                                  const EncodedCondition& cond) const {
  if (z.rank() != 3 || z.dim(0) != cfg_.latent_channels || z.dim(1) != cfg_.latent_h ||
      z.dim(2) != cfg_.latent_w)
    throw std::invalid_argument("backbone: latent shape mismatch");
  const auto& s = *store_;
  const int64_t h = cfg_.hidden;
  Tensor x = linear(patchify_tokens(z, cfg_.patch), s.at("patch.w"), s.at("patch.b"));
  for (int64_t i = 0; i < cfg_.depth; ++i)
    x = dit_block_forward(s, cfg_, "blk" + std::to_string(i) + ".", x, c_global, cond, rope_);
  Tensor fmod = add_rowvec(matmul(reshape(silu(c_global), {1, h}), s.at("final.mod_w")),
                           s.at("final.mod_b"));
  fmod = reshape(fmod, {2 * h});
  Tensor out = modulate(layer_norm(x, 1e-6), narrow(fmod, 0, 0, h), narrow(fmod, 0, h, h));
  out = linear(out, s.at("final.w"), s.at("final.b"));
  return unpatchify_tokens(out, cfg_.patch, cfg_.latent_channels, cfg_.latent_h, cfg_.latent_w);
}

// ---- streaming shape check ----

ShapeCheckReport run_shape_check(const ModelConfig& cfg, uint64_t seed, bool attempt_forward) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  ShapeCheckReport rep;
  rep.forward_attempted = attempt_forward;
  Rng rng(seed);
  NoGradGuard ng;

  // persistent pieces: conditioning encoders, metadata MLP, patch/final
  ParamStore outer;
  outer.set_dtype(DType::kF32);
  ConditioningEncoder cond_enc(cfg.cond, outer);
  GlobalConditioner gcond(cfg.hidden, cfg.cond, outer);
  const int64_t pf = cfg.patch * cfg.patch * cfg.latent_channels;
  outer.declare("patch.w", {pf, cfg.hidden}, DType::kF32);
  outer.declare("patch.b", {cfg.hidden}, DType::kF32);
  outer.declare("final.mod_w", {cfg.hidden, 2 * cfg.hidden}, DType::kF32);
  outer.declare("final.mod_b", {2 * cfg.hidden}, DType::kF32);
  outer.declare("final.w", {cfg.hidden, pf}, DType::kF32);
  outer.declare("final.b", {pf}, DType::kF32);
  rep.total_params += outer.total_parameters();

  // count block parameters exactly by declaring one block
  {
    ParamStore probe;
    probe.set_dtype(DType::kF32);
    declare_block_params(probe, cfg, "blk.");
    rep.total_params += cfg.depth * probe.total_parameters();
  }

  if (!attempt_forward) {
    rep.note = "forward skipped";
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
  }

  cond_enc.init_params(rng);
  gcond.init_params(rng);
  fill_randn(outer.at("patch.w"), rng, 0.02);

  const auto toks = cond_enc.tokenize_prompt("full scale shape check prompt");
  const auto ec = cond_enc.encode(toks, neutral_amd(), make_v_res(256, 256, 256, 256, 512.0));
  Tensor c_global = gcond.c_global(500.0, ec);

  Rng zrng(seed ^ 0x5eed);
  Tensor z = Tensor::randn({cfg.latent_channels, cfg.latent_h, cfg.latent_w}, zrng, 1.0,
                           DType::kF32);
  Tensor x = add_rowvec(matmul(patchify_tokens(z, cfg.patch), outer.at("patch.w")),
                        outer.at("patch.b"));
  const RopeAngles rope =
      rope_angles_for_grid(cfg.grid_h(), cfg.grid_w(), cfg.hidden, cfg.heads, cfg.rope_base);
  for (int64_t i = 0; i < cfg.depth; ++i) {
    // one block at a time; freed before the next is built
    ParamStore blk;
    blk.set_dtype(DType::kF32);
    declare_block_params(blk, cfg, "blk.");
    Rng brng = rng.fork(static_cast<uint64_t>(i) + 1);
    init_block_params(blk, cfg, "blk.", brng);
    x = dit_block_forward(blk, cfg, "blk.", x, c_global, ec, rope);
  }
  Tensor fmod =
      add_rowvec(matmul(reshape(silu(c_global), {1, cfg.hidden}), outer.at("final.mod_w")),
                 outer.at("final.mod_b"));
  fmod = reshape(fmod, {2 * cfg.hidden});
  Tensor out = modulate(layer_norm(x, 1e-6), narrow(fmod, 0, 0, cfg.hidden),
                        narrow(fmod, 0, cfg.hidden, cfg.hidden));
  out = linear(out, outer.at("final.w"), outer.at("final.b"));
  Tensor v = unpatchify_tokens(out, cfg.patch, cfg.latent_channels, cfg.latent_h, cfg.latent_w);
  rep.out_shape = v.shape();
  bool finite = true;
  for (int64_t i = 0; i < v.numel() && finite; i += 97) finite = std::isfinite(v.value_at(i));
  rep.forward_ok = finite && v.shape() == z.shape();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace progdit
