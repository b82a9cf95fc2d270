#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "progdit/schedule.hpp"
#include "progdit/tensor.hpp"

namespace progdit {

struct SamplerConfig {
  int n_steps = 30;
  double cfg_scale = 4.5;
  double sigma_min = 0.02;
  double sigma_max = 80.0;
  double rho = 7.0;
  // fraction of the sigma grid traversed when starting from a baseline
  // latent; 1 = pure noise, 0 = return the baseline untouched
  double strength = 0.6;
  uint64_t seed = 0;

  void validate() const;
};

// guided = (1-s)*uncond + s*cond: affine in s, and bit-exact passthrough at
// the s=0 and s=1 endpoints
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s);

// VP levels of the sampling grid: (alpha_i, sigma_i) with the karras ratio
// sigma_i/alpha_i, terminal entry exactly (1, 0)
struct VpGrid {
  std::vector<double> alpha;
  std::vector<double> sigma;
  std::vector<double> karras;  // sigma/alpha ratios (0 at the terminal entry)
  size_t levels() const { return alpha.size(); }
};

VpGrid vp_grid_from_karras(const SigmaGrid& grid);

// one DPM-Solver++(2M) transition from level i-1 to level i in
// data-prediction form; x0_prev == nullptr or a terminal target falls back
// to first order
Tensor solver_step_2m(const Tensor& z, const Tensor& x0_cur, const Tensor* x0_prev,
                      const VpGrid& grid, size_t i);

// velocity model callback: (z, t, alpha_t, sigma_t) -> v-hat
using VelocityFn = std::function<Tensor(const Tensor&, double, double, double)>;

struct SampleInputs {
  VelocityFn cond_v;
  VelocityFn uncond_v;  // may be empty when cfg_scale == 1
  const NoiseSchedule* schedule = nullptr;
  std::vector<int64_t> latent_shape;
  DType dtype = DType::kF64;
  const Tensor* baseline = nullptr;  // noised-latent initialization when set
};

// deterministic given (seed, config, model); the returned latent is the
// terminal clean prediction (sigma = 0)
Tensor sample(const SampleInputs& in, const SamplerConfig& cfg);

}  // namespace progdit
