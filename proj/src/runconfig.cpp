#include "progdit/runconfig.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "progdit/errors.hpp"
#include "progdit/kernels.hpp"

namespace progdit {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

DType RunConfig::dtype_enum() const {
  if (dtype == "f32") return DType::kF32;
  if (dtype == "f64") return DType::kF64;
  throw ConfigError("config: dtype must be f32 or f64, got '" + dtype + "'");
}

NoiseSchedule RunConfig::make_schedule() const {
  return NoiseSchedule::cosine(schedule.steps, schedule.cosine_s);
}

void RunConfig::validate() const {
  dtype_enum();
  model.validate();
  trainer.validate();
  sampler.validate();
  if (schedule.steps < 1) throw ConfigError("config: schedule.steps must be >= 1");
  if (codec.kind != "trainable" && codec.kind != "fixed8")
    throw ConfigError("config: codec.kind must be trainable or fixed8");
  if (data.image_size / 8 != model.latent_h || data.image_size / 8 != model.latent_w)
    throw ConfigError("config: model latent " + std::to_string(model.latent_h) + "x" +
                      std::to_string(model.latent_w) + " must be image_size/8 = " +
                      std::to_string(data.image_size / 8));
}

std::string RunConfig::to_json_string() const {
  json j;
  j["seed"] = seed;
  j["dtype"] = dtype;
  j["deterministic"] = deterministic;
  j["threads"] = threads;
  j["model"] = {{"depth", model.depth},
                {"hidden", model.hidden},
                {"heads", model.heads},
                {"patch", model.patch},
                {"latent_channels", model.latent_channels},
                {"latent_h", model.latent_h},
                {"latent_w", model.latent_w},
                {"rope_base", model.rope_base},
                {"clip_dim", model.cond.clip_dim},
                {"clip_len", model.cond.clip_len},
                {"t5_dim", model.cond.t5_dim},
                {"t5_len", model.cond.t5_len},
                {"vocab", model.cond.vocab},
                {"res_norm_max", model.cond.res_norm_max}};
  j["schedule"] = {{"steps", schedule.steps}, {"cosine_s", schedule.cosine_s}};
  j["trainer"] = {{"base_lr", trainer.base_lr},
                  {"weight_decay", trainer.weight_decay},
                  {"beta1", trainer.beta1},
                  {"beta2", trainer.beta2},
                  {"eps", trainer.eps},
                  {"total_steps", trainer.total_steps},
                  {"warmup_fraction", trainer.warmup_fraction},
                  {"t0_fraction", trainer.t0_fraction},
                  {"t_mult", trainer.t_mult},
                  {"batch_size", trainer.batch_size},
                  {"cond_drop_prob", trainer.cond_drop_prob},
                  {"loss_weight", trainer.loss_weight},
                  {"checkpoint_every", trainer.checkpoint_every}};
  j["sampler"] = {{"steps", sampler.n_steps},   {"cfg_scale", sampler.cfg_scale},
                  {"sigma_min", sampler.sigma_min}, {"sigma_max", sampler.sigma_max},
                  {"rho", sampler.rho},         {"strength", sampler.strength}};
  j["data"] = {{"subjects", data.subjects},
               {"visits_per_subject", data.visits_per_subject},
               {"image_size", data.image_size},
               {"noise_level", data.noise_level},
               {"train_fraction", data.train_fraction},
               {"all_pairs", data.all_pairs},
               {"seed", data.seed}};
  j["codec"] = {{"kind", codec.kind}, {"c1", codec.c1},       {"c2", codec.c2},
                {"steps", codec.steps}, {"batch", codec.batch}, {"lr", codec.lr}};
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  RunConfig c;
  check_keys(j, {"seed", "dtype", "deterministic", "threads", "model", "schedule", "trainer",
                 "sampler", "data", "codec"},
             "top level");
  maybe(j, "seed", c.seed);
  maybe(j, "dtype", c.dtype);
  maybe(j, "deterministic", c.deterministic);
  maybe(j, "threads", c.threads);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m,
               {"depth", "hidden", "heads", "patch", "latent_channels", "latent_h", "latent_w",
                "rope_base", "clip_dim", "clip_len", "t5_dim", "t5_len", "vocab",
                "res_norm_max"},
               "model");
    maybe(m, "depth", c.model.depth);
    maybe(m, "hidden", c.model.hidden);
    maybe(m, "heads", c.model.heads);
    maybe(m, "patch", c.model.patch);
    maybe(m, "latent_channels", c.model.latent_channels);
    maybe(m, "latent_h", c.model.latent_h);
    maybe(m, "latent_w", c.model.latent_w);
    maybe(m, "rope_base", c.model.rope_base);
    maybe(m, "clip_dim", c.model.cond.clip_dim);
    maybe(m, "clip_len", c.model.cond.clip_len);
    maybe(m, "t5_dim", c.model.cond.t5_dim);
    maybe(m, "t5_len", c.model.cond.t5_len);
    maybe(m, "vocab", c.model.cond.vocab);
    maybe(m, "res_norm_max", c.model.cond.res_norm_max);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    check_keys(s, {"steps", "cosine_s"}, "schedule");
    maybe(s, "steps", c.schedule.steps);
    maybe(s, "cosine_s", c.schedule.cosine_s);
  }
  if (j.contains("trainer")) {
    const auto& t = j.at("trainer");
    check_keys(t,
               {"base_lr", "weight_decay", "beta1", "beta2", "eps", "total_steps",
                "warmup_fraction", "t0_fraction", "t_mult", "batch_size", "cond_drop_prob",
                "loss_weight", "checkpoint_every"},
               "trainer");
    maybe(t, "base_lr", c.trainer.base_lr);
    maybe(t, "weight_decay", c.trainer.weight_decay);
    maybe(t, "beta1", c.trainer.beta1);
    maybe(t, "beta2", c.trainer.beta2);
    maybe(t, "eps", c.trainer.eps);
    maybe(t, "total_steps", c.trainer.total_steps);
    maybe(t, "warmup_fraction", c.trainer.warmup_fraction);
    maybe(t, "t0_fraction", c.trainer.t0_fraction);
    maybe(t, "t_mult", c.trainer.t_mult);
    maybe(t, "batch_size", c.trainer.batch_size);
    maybe(t, "cond_drop_prob", c.trainer.cond_drop_prob);
    maybe(t, "loss_weight", c.trainer.loss_weight);
    maybe(t, "checkpoint_every", c.trainer.checkpoint_every);
  }
  if (j.contains("sampler")) {
    const auto& s = j.at("sampler");
    check_keys(s, {"steps", "cfg_scale", "sigma_min", "sigma_max", "rho", "strength"},
               "sampler");
    maybe(s, "steps", c.sampler.n_steps);
    maybe(s, "cfg_scale", c.sampler.cfg_scale);
    maybe(s, "sigma_min", c.sampler.sigma_min);
    maybe(s, "sigma_max", c.sampler.sigma_max);
    maybe(s, "rho", c.sampler.rho);
    maybe(s, "strength", c.sampler.strength);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d,
               {"subjects", "visits_per_subject", "image_size", "noise_level",
                "train_fraction", "all_pairs", "seed"},
               "data");
    maybe(d, "subjects", c.data.subjects);
    maybe(d, "visits_per_subject", c.data.visits_per_subject);
    maybe(d, "image_size", c.data.image_size);
    maybe(d, "noise_level", c.data.noise_level);
    maybe(d, "train_fraction", c.data.train_fraction);
    maybe(d, "all_pairs", c.data.all_pairs);
    maybe(d, "seed", c.data.seed);
  }
  if (j.contains("codec")) {
    const auto& k = j.at("codec");
    check_keys(k, {"kind", "c1", "c2", "steps", "batch", "lr"}, "codec");
    maybe(k, "kind", c.codec.kind);
    maybe(k, "c1", c.codec.c1);
    maybe(k, "c2", c.codec.c2);
    maybe(k, "steps", c.codec.steps);
    maybe(k, "batch", c.codec.batch);
    maybe(k, "lr", c.codec.lr);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_json_string(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("config: cannot write " + path);
  os << to_json_string();
}

void apply_runtime_settings(const RunConfig& cfg) {
  if (cfg.deterministic) {
    kernels::select_backend(kernels::Backend::kScalar);
  } else {
    kernels::init_from_env();
  }
}

}  // namespace progdit
