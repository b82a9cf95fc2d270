#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "progdit/codec.hpp"
#include "progdit/dataio.hpp"
#include "progdit/metrics.hpp"
#include "progdit/model.hpp"
#include "progdit/runconfig.hpp"
#include "progdit/sampler.hpp"
#include "progdit/trainer.hpp"

namespace progdit {

// ---- checkpoints ----

void save_checkpoint(const std::string& path, const RunConfig& cfg, const GenerativeModel& model,
                     const LatentCodec& codec, const FeatureRanges& ranges, int64_t step,
                     const std::string& rng_state, const std::string& opt_state);

struct LoadedCheckpoint {
  RunConfig config;
  int64_t step = 0;
  std::string rng_state;
  FeatureRanges ranges;
  std::unique_ptr<GenerativeModel> model;
  std::unique_ptr<LatentCodec> codec;
  std::string opt_state;  // AdamW blob; empty when absent
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// ---- dataset assembly ----

struct TrainSample {
  Tensor z0;          // scaled latent of the target image
  Tensor baseline_z;  // scaled latent of the baseline image
  TokenizedPrompt toks;
  AuxMetadata amd;
  ManifestRow row;
};

struct Dataset {
  std::vector<TrainSample> train;
  std::vector<TrainSample> test;
};

Dataset build_dataset(const std::vector<ManifestRow>& rows, const std::string& data_dir,
                      const LatentCodec& codec, const GenerativeModel& model,
                      const FeatureRanges& ranges);

// ---- training ----

// one diffusion loss over a batch: mean of w(t) * ||v_t - f(z_t, t, c)||^2,
// conditioning dropped per cond_drop_prob; rng draw order per sample is
// (index, t, drop, eps)
Tensor diffusion_loss(const GenerativeModel& model, const NoiseSchedule& ns,
                      const std::vector<const TrainSample*>& batch,
                      const std::vector<int>& timesteps, const std::vector<bool>& dropped,
                      const std::vector<Tensor>& noises,
                      const std::function<double(int)>& weight);

struct TrainRunResult {
  std::string final_checkpoint;
  double first_loss = 0.0;
  double last_loss = 0.0;
  int64_t steps_run = 0;
};

// full training run: codec preparation, range fitting, latent caching, the
// optimization loop with CSV logging and periodic checkpoints; resumable
TrainRunResult run_training(const RunConfig& cfg, const std::string& data_dir,
                            const std::string& out_dir, const std::string& resume_from = "");

// ---- generation / evaluation ----

Tensor generate_latent(const GenerativeModel& model, const NoiseSchedule& ns,
                       const EncodedCondition& cond, const EncodedCondition& uncond,
                       const Tensor* baseline, const SamplerConfig& scfg);

EncodedCondition condition_for_row(const GenerativeModel& model, const ManifestRow& row,
                                   const FeatureRanges& ranges);

struct EvalOptions {
  std::string split = "test";
  // model: sample from the checkpoint; identity: generated = baseline;
  // target: generated = target (metrics sanity path)
  std::string generator = "model";
  bool error_maps = false;
  int max_pairs = 0;  // 0 = all
  uint64_t seed = 0;
};

struct EvalResult {
  StratifiedReport report;
  std::vector<MetricSample> samples;
  double mean_ssim_generated = 0.0;
};

EvalResult run_eval(const LoadedCheckpoint& ckpt, const std::vector<ManifestRow>& rows,
                    const std::string& data_dir, const std::string& out_dir,
                    const EvalOptions& opts);

// generated ventricle areas for one baseline row across counterfactual
// follow-up intervals (acceptance: monotone progression control)
std::vector<int64_t> ventricle_area_series(const LoadedCheckpoint& ckpt, const ManifestRow& row,
                                           const std::string& data_dir,
                                           const std::vector<double>& delta_ts,
                                           const SamplerConfig& scfg);

}  // namespace progdit
