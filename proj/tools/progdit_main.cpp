// progdit: phantom cohorts, interval-conditioned diffusion training,
// sampling and stratified evaluation, from one binary.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>

#include "progdit/errors.hpp"
#include "progdit/kernels.hpp"
#include "progdit/model.hpp"
#include "progdit/pipeline.hpp"
#include "progdit/runconfig.hpp"

namespace fs = std::filesystem;
using namespace progdit;

namespace {

int cmd_phantom_gen(const RunConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  cfg.save((fs::path(out) / "config.resolved.json").string());
  const auto res = phantom_gen(cfg.data, out);
  std::cout << "subjects " << res.subjects << ", pairs " << res.rows.size() << ", skipped "
            << res.skipped_subjects << "\n";
  std::cout << "manifest: " << (fs::path(out) / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data, const std::string& out,
              const std::string& resume) {
  const auto res = run_training(cfg, data, out, resume);
  std::cout << "trained " << res.steps_run << " steps, loss " << res.first_loss << " -> "
            << res.last_loss << "\n";
  std::cout << "checkpoint: " << res.final_checkpoint << "\n";
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& manifest_dir,
               const std::string& pair_id, const std::string& prompt, const std::string& out,
               const SamplerConfig& scfg, bool have_steps, bool have_cfg, bool have_strength,
               bool deterministic) {
  auto ckpt = load_checkpoint(ckpt_path);
  if (deterministic) ckpt.config.deterministic = true;
  apply_runtime_settings(ckpt.config);
  SamplerConfig sc = ckpt.config.sampler;
  if (have_steps) sc.n_steps = scfg.n_steps;
  if (have_cfg) sc.cfg_scale = scfg.cfg_scale;
  if (have_strength) sc.strength = scfg.strength;
  sc.seed = scfg.seed;

  fs::create_directories(out);
  const NoiseSchedule ns = ckpt.config.make_schedule();
  const EncodedCondition uncond = ckpt.model->encode_unconditional();

  EncodedCondition cond;
  Tensor baseline;
  bool have_baseline = false;
  if (!pair_id.empty()) {
    const auto rows = read_manifest((fs::path(manifest_dir) / "manifest.jsonl").string());
    const ManifestRow* row = nullptr;
    for (const auto& r : rows)
      if (r.pair_id == pair_id) row = &r;
    if (!row) throw DataError("sample: pair_id '" + pair_id + "' not in manifest");
    cond = condition_for_row(*ckpt.model, *row, ckpt.ranges);
    const Image img = read_pgm((fs::path(manifest_dir) / row->baseline_path).string());
    baseline = ckpt.codec->encode(image_to_tensor(img, ckpt.config.dtype_enum())).data;
    have_baseline = true;
  } else {
    cond = ckpt.model->encode_condition(prompt, neutral_amd(), ckpt.model->default_v_res());
  }

  Tensor z = generate_latent(*ckpt.model, ns, cond, uncond,
                             have_baseline ? &baseline : nullptr, sc);
  const Image img = tensor_to_image(ckpt.codec->decode(Latent{z, true}));
  write_pgm((fs::path(out) / "sample.pgm").string(), img);
  save_tnsr1((fs::path(out) / "sample_latent.tnsr").string(), z);
  RunConfig resolved = ckpt.config;
  resolved.sampler = sc;
  resolved.save((fs::path(out) / "config.resolved.json").string());
  std::cout << "sample: " << (fs::path(out) / "sample.pgm").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_dir,
             const std::string& report_dir, const EvalOptions& opts, bool deterministic) {
  auto ckpt = load_checkpoint(ckpt_path);
  if (deterministic) {
    ckpt.config.deterministic = true;
    ckpt.config.threads = 1;
  }
  apply_runtime_settings(ckpt.config);
  const auto rows = read_manifest((fs::path(manifest_dir) / "manifest.jsonl").string());
  fs::create_directories(report_dir);
  const auto res = run_eval(ckpt, rows, manifest_dir, report_dir, opts);
  RunConfig resolved = ckpt.config;
  resolved.save((fs::path(report_dir) / "config.resolved.json").string());
  std::cout << res.report.to_text();
  std::cout << "mean generated SSIM: " << res.mean_ssim_generated << "\n";
  std::cout << "report: " << (fs::path(report_dir) / "report.txt").string() << "\n";
  return 0;
}

// finite-difference verification of every differentiable op and a tiny
// end-to-end backbone; nonzero exit on failure
int cmd_gradcheck() {
  Rng rng(2024);
  double worst = 0.0;
  auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f,
                   const Tensor& x) {
    const double err = grad_check(f, x, 1e-5);
    worst = std::max(worst, err);
    std::cout << (err < 1e-4 ? "  ok   " : "  FAIL ") << name << "  max_rel_err=" << err
              << "\n";
  };
  Tensor x = Tensor::randn({4, 6}, rng, 1.0);
  Tensor other = Tensor::randn({4, 6}, rng, 1.0);
  Tensor v = Tensor::randn({6}, rng, 1.0);
  Tensor w = Tensor::randn({6, 3}, rng, 1.0);
  check("add", [&](const Tensor& t) { return sum_all(mul(add(t, other), other)); }, x);
  check("mul", [&](const Tensor& t) { return sum_all(mul(mul(t, other), other)); }, x);
  check("matmul", [&](const Tensor& t) { return mean_all(matmul(t, w)); }, x);
  check("softmax", [&](const Tensor& t) { return sum_all(mul(softmax_lastdim(t), other)); }, x);
  check("layer_norm",
        [&](const Tensor& t) { return sum_all(mul(layer_norm(t, 1e-6), other)); }, x);
  check("silu", [&](const Tensor& t) { return sum_all(mul(silu(t), other)); }, x);
  check("add_rowvec", [&](const Tensor& t) { return sum_all(mul(add_rowvec(t, v), other)); },
        x);
  check("mul_rowvec", [&](const Tensor& t) { return sum_all(mul(mul_rowvec(t, v), other)); },
        x);

  // tiny backbone end to end
  ModelConfig mc;
  mc.depth = 1;
  mc.hidden = 16;
  mc.heads = 2;
  mc.patch = 2;
  mc.latent_h = 4;
  mc.latent_w = 4;
  mc.cond.clip_dim = 8;
  mc.cond.clip_len = 4;
  mc.cond.t5_dim = 12;
  mc.cond.t5_len = 6;
  GenerativeModel model(mc, DType::kF64);
  model.init_params(7);
  // break the adaLN-Zero identity so gradients flow everywhere
  Rng perturb(8);
  for (auto& [name, t] : model.params().items())
    for (int64_t i = 0; i < t.numel(); ++i)
      t.set_value(i, t.value_at(i) + 0.05 * perturb.normal());
  const EncodedCondition ec =
      model.encode_condition("gradcheck probe prompt", neutral_amd(), {0.5, 0.5, 0.5, 0.5});
  Tensor z = Tensor::randn({4, 4, 4}, rng, 1.0);
  check("backbone",
        [&](const Tensor& t) {
          Tensor vh = model.velocity(t, 321.0, ec);
          return mean_all(mul(vh, vh));
        },
        z);
  std::cout << (worst < 1e-4 ? "gradcheck passed" : "gradcheck FAILED") << " (worst " << worst
            << ")\n";
  return worst < 1e-4 ? 0 : 3;
}

int cmd_shape_check(bool forward) {
  const ModelConfig cfg = ModelConfig::full_scale();
  const auto rep = run_shape_check(cfg, 11, forward);
  std::cout << "parameters: " << rep.total_params << "\n";
  if (rep.forward_attempted) {
    std::cout << "forward: " << (rep.forward_ok ? "ok" : "FAILED") << " out_shape [";
    for (size_t i = 0; i < rep.out_shape.size(); ++i)
      std::cout << (i ? "," : "") << rep.out_shape[i];
    std::cout << "] in " << rep.seconds << "s\n";
    return rep.forward_ok ? 0 : 3;
  }
  std::cout << "forward: skipped (" << rep.note << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interval-conditioned latent diffusion for longitudinal brain-MRI phantoms"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, resume, ckpt, manifest_dir, pair_id, prompt;
  bool deterministic = false;
  uint64_t seed_flag = 0;
  bool have_seed = false;

  app.add_flag("--deterministic", deterministic,
               "single-threaded scalar kernels, bit-exact across runs");

  auto* gen = app.add_subcommand("phantom-gen", "generate a synthetic progression cohort");
  int subjects = -1, visits = -1, image_size = -1;
  gen->add_option("--config", config_path, "run config JSON");
  gen->add_option("--subjects", subjects, "number of subjects");
  gen->add_option("--visits-per-subject", visits, "visits per subject");
  gen->add_option("--image-size", image_size, "square image size (divisible by 8)");
  gen->add_option("--seed", seed_flag, "cohort seed")->each([&](const std::string&) {
    have_seed = true;
  });
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train = app.add_subcommand("train", "train codec (if needed) and the diffusion model");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--data", data_dir, "phantom-gen output directory")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* sample_cmd = app.add_subcommand("sample", "generate one follow-up image");
  SamplerConfig scfg;
  bool have_steps = false, have_cfgscale = false, have_strength = false;
  sample_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  sample_cmd->add_option("--manifest", manifest_dir, "phantom-gen dir (for --pair-id)");
  sample_cmd->add_option("--pair-id", pair_id, "manifest pair to condition on");
  sample_cmd->add_option("--prompt", prompt, "free-text prompt (no baseline image)");
  sample_cmd->add_option("--steps", scfg.n_steps, "solver steps")
      ->each([&](const std::string&) { have_steps = true; });
  sample_cmd->add_option("--cfg-scale", scfg.cfg_scale, "classifier-free guidance scale")
      ->each([&](const std::string&) { have_cfgscale = true; });
  sample_cmd->add_option("--strength", scfg.strength, "baseline traversal fraction")
      ->each([&](const std::string&) { have_strength = true; });
  sample_cmd->add_option("--seed", scfg.seed, "sampling seed");
  sample_cmd->add_option("--out", out_dir, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "stratified test-split evaluation");
  EvalOptions eopts;
  eval_cmd->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest_dir, "phantom-gen dir")->required();
  eval_cmd->add_option("--report", out_dir, "report directory")->required();
  eval_cmd->add_option("--split", eopts.split, "manifest split to evaluate");
  eval_cmd->add_option("--generator", eopts.generator, "model | identity | target");
  eval_cmd->add_flag("--error-maps", eopts.error_maps, "write per-pair |error| PGMs");
  eval_cmd->add_option("--max-pairs", eopts.max_pairs, "cap evaluated pairs (0 = all)");
  eval_cmd->add_option("--seed", eopts.seed, "sampling seed salt");

  app.add_subcommand("gradcheck", "finite-difference gradient verification");

  auto* shape = app.add_subcommand("shape-check", "construct the full-scale configuration");
  bool shape_no_forward = false;
  shape->add_flag("--no-forward", shape_no_forward, "skip the forward pass");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = RunConfig::load(config_path);
    cfg.deterministic = cfg.deterministic || deterministic;
    apply_runtime_settings(cfg);

    if (gen->parsed()) {
      if (subjects > 0) cfg.data.subjects = subjects;
      if (visits > 0) cfg.data.visits_per_subject = visits;
      if (image_size > 0) cfg.data.image_size = image_size;
      if (have_seed) cfg.data.seed = seed_flag;
      return cmd_phantom_gen(cfg, out_dir);
    }
    if (train->parsed()) return cmd_train(cfg, data_dir, out_dir, resume);
    if (sample_cmd->parsed()) {
      if (pair_id.empty() && prompt.empty())
        throw ConfigError("sample: need --pair-id or --prompt");
      if (!pair_id.empty() && manifest_dir.empty())
        throw ConfigError("sample: --pair-id needs --manifest");
      return cmd_sample(ckpt, manifest_dir, pair_id, prompt, out_dir, scfg, have_steps,
                        have_cfgscale, have_strength, deterministic);
    }
    if (eval_cmd->parsed()) return cmd_eval(ckpt, manifest_dir, out_dir, eopts, deterministic);
    if (app.get_subcommand("gradcheck")->parsed()) return cmd_gradcheck();
    if (shape->parsed()) return cmd_shape_check(!shape_no_forward);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
