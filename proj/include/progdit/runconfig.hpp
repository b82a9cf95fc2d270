#pragma once

#include <string>

#include "progdit/backbone.hpp"
#include "progdit/dataio.hpp"
#include "progdit/sampler.hpp"
#include "progdit/trainer.hpp"

namespace progdit {

struct CodecConfig {
  std::string kind = "trainable";  // trainable | fixed8
  int64_t c1 = 32;
  int64_t c2 = 64;
  int steps = 2500;
  int batch = 16;
  double lr = 2e-3;
};

struct ScheduleConfig {
  int steps = 1000;
  double cosine_s = 0.008;
};

// the single source of truth for a run; unknown keys are rejected and every
// command writes its resolved copy next to its outputs
struct RunConfig {
  uint64_t seed = 1;
  std::string dtype = "f32";  // f32 | f64
  bool deterministic = false;
  int threads = 0;  // 0 = decide from PROGDIT_THREADS / hardware

  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig trainer;
  SamplerConfig sampler;
  CohortConfig data;
  CodecConfig codec;

  DType dtype_enum() const;
  NoiseSchedule make_schedule() const;
  void validate() const;

  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  std::string to_json_string() const;
  static RunConfig from_json_string(const std::string& text);
};

// applies deterministic/threads/kernel-backend policy for a process
void apply_runtime_settings(const RunConfig& cfg);

}  // namespace progdit
