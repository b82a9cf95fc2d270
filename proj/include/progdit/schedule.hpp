#pragma once

#include <cstdint>
#include <vector>

#include "progdit/tensor.hpp"

namespace progdit {

// Variance-preserving forward process over a discrete squared-cosine
// alpha-bar table: alpha_t^2 + sigma_t^2 = 1 at every t in [0, N].
class NoiseSchedule {
 public:
  // squared-cosine alpha-bar, normalized so alpha_bar(0) = 1
  static NoiseSchedule cosine(int n_steps = 1000, double s = 0.008);

  int n_steps() const { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const;
  // (alpha_t, sigma_t); t = 0 gives exactly (1, 0)
  std::pair<double, double> alpha_sigma(int t) const;
  // continuous-t variant used when sampling on a sigma grid
  std::pair<double, double> alpha_sigma_cont(double t) const;

  // z_t = alpha_t * z0 + sigma_t * eps
  Tensor q_sample(const Tensor& z0, int t, const Tensor& eps) const;
  // v_t = alpha_t * eps - sigma_t * z0
  Tensor v_target(const Tensor& z0, const Tensor& eps, int t) const;
  // x0_hat = alpha_t * z_t - sigma_t * v
  Tensor x0_from_v(const Tensor& z_t, const Tensor& v, int t) const;
  // eps_hat = sigma_t * z_t + alpha_t * v
  Tensor eps_from_v(const Tensor& z_t, const Tensor& v, int t) const;

  // same algebra at explicit (alpha, sigma); the sampler works off-grid
  static Tensor x0_from_v_at(const Tensor& z_t, const Tensor& v, double alpha, double sigma);
  static Tensor eps_from_v_at(const Tensor& z_t, const Tensor& v, double alpha, double sigma);

  // invert sigma/alpha = ratio to a continuous timestep by linear
  // interpolation over the alpha-bar table; clamped to [0, N]
  double t_of_sigma_ratio(double ratio) const;
  double sigma_ratio(int t) const;

 private:
  std::vector<double> alpha_bar_;  // index 0..N
};

// Karras rho-warped sigma grid, strictly decreasing, terminal 0 appended.
struct SigmaGrid {
  std::vector<double> sigmas;  // size n_steps + 1; last entry 0
  double rho = 7.0;
  int n_steps = 0;

  double sigma_max() const { return sigmas.front(); }
  double sigma_min() const { return sigmas[sigmas.size() - 2]; }
};

SigmaGrid karras_sigmas(int n, double sigma_min, double sigma_max, double rho);

}  // namespace progdit
