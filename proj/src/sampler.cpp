#include "progdit/sampler.hpp"

#include <cmath>

#include "progdit/errors.hpp"

namespace progdit {

void SamplerConfig::validate() const {
  if (n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
  if (cfg_scale < 0.0) throw ConfigError("sampler: cfg_scale must be >= 0");
  if (!(strength >= 0.0 && strength <= 1.0))
    throw ConfigError("sampler: strength must be in [0,1]");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max))
    throw ConfigError("sampler: need 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw ConfigError("sampler: rho must be positive");
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double s) {
  if (eps_cond.shape() != eps_uncond.shape())
    throw std::invalid_argument("cfg_combine: shape mismatch");
  // (1-s)*u + s*c rather than u + s*(c-u): identical algebra, but the
  // endpoints s=0 and s=1 reproduce their operand bit-for-bit
  return add(scale(eps_uncond, 1.0 - s), scale(eps_cond, s));
}

VpGrid vp_grid_from_karras(const SigmaGrid& grid) {
  VpGrid g;
  const size_t n = grid.sigmas.size();
  g.alpha.resize(n);
  g.sigma.resize(n);
  g.karras = grid.sigmas;
  for (size_t i = 0; i < n; ++i) {
    const double r = grid.sigmas[i];
    if (r == 0.0) {
      g.alpha[i] = 1.0;
      g.sigma[i] = 0.0;
    } else {
      const double a = 1.0 / std::sqrt(1.0 + r * r);
      g.alpha[i] = a;
      g.sigma[i] = r * a;
    }
  }
  return g;
}

namespace {

double lambda_of(const VpGrid& g, size_t i) { return std::log(g.alpha[i] / g.sigma[i]); }

}  // namespace

Tensor solver_step_2m(const Tensor& z, const Tensor& x0_cur, const Tensor* x0_prev,
                      const VpGrid& grid, size_t i) {
  if (i == 0 || i >= grid.levels())
    throw std::invalid_argument("solver_step_2m: level index out of range");
  if (!(grid.karras[i] < grid.karras[i - 1]))
    throw NumericError("solver_step_2m: sigma grid not strictly decreasing at level " +
                       std::to_string(i));
  const double a_i = grid.alpha[i], s_i = grid.sigma[i];
  const double s_prev = grid.sigma[i - 1];

  if (s_i == 0.0) return x0_cur.clone();  // terminal level: clean prediction

  const double h_i = lambda_of(grid, i) - lambda_of(grid, i - 1);
  Tensor d = x0_cur;
  const bool second_order = x0_prev != nullptr && i >= 2;
  if (second_order) {
    const double h_prev = lambda_of(grid, i - 1) - lambda_of(grid, i - 2);
    const double r = h_prev / h_i;
    d = add(scale(x0_cur, 1.0 + 1.0 / (2.0 * r)), scale(*x0_prev, -1.0 / (2.0 * r)));
  }
  return add(scale(z, s_i / s_prev), scale(d, -a_i * (std::exp(-h_i) - 1.0)));
}

Tensor sample(const SampleInputs& in, const SamplerConfig& cfg) {
  cfg.validate();
  if (!in.schedule) throw std::invalid_argument("sample: schedule required");
  if (!in.cond_v) throw std::invalid_argument("sample: conditional model required");
  if (cfg.cfg_scale != 1.0 && !in.uncond_v)
    throw std::invalid_argument("sample: cfg_scale != 1 needs the unconditional model");

  const SigmaGrid karras = karras_sigmas(cfg.n_steps, cfg.sigma_min, cfg.sigma_max, cfg.rho);
  const VpGrid grid = vp_grid_from_karras(karras);

  size_t j0 = 0;
  if (in.baseline != nullptr) {
    j0 = static_cast<size_t>(
        std::floor((1.0 - cfg.strength) * static_cast<double>(cfg.n_steps)));
    if (j0 >= static_cast<size_t>(cfg.n_steps))
      return in.baseline->clone();  // strength 0: no solver iterations
  }

  Rng rng(cfg.seed);
  NoGradGuard ng;
  Tensor eps = Tensor::randn(in.latent_shape, rng, 1.0, in.dtype);
  Tensor z;
  if (in.baseline != nullptr && cfg.strength < 1.0) {
    if (in.baseline->shape() != in.latent_shape)
      throw std::invalid_argument("sample: baseline shape mismatch");
    z = add(scale(*in.baseline, grid.alpha[j0]), scale(eps, grid.sigma[j0]));
  } else {
    z = scale(eps, grid.sigma[j0]);  // pure-noise start
  }

  Tensor x0_prev;
  const size_t terminal = grid.levels() - 1;
  for (size_t i = j0; i < terminal; ++i) {
    const double a = grid.alpha[i], s = grid.sigma[i];
    const double t = in.schedule->t_of_sigma_ratio(grid.karras[i]);
    Tensor v_c = in.cond_v(z, t, a, s);
    Tensor eps_hat;
    if (cfg.cfg_scale == 1.0) {
      eps_hat = NoiseSchedule::eps_from_v_at(z, v_c, a, s);
    } else {
      Tensor v_u = in.uncond_v(z, t, a, s);
      eps_hat = cfg_combine(NoiseSchedule::eps_from_v_at(z, v_c, a, s),
                            NoiseSchedule::eps_from_v_at(z, v_u, a, s), cfg.cfg_scale);
    }
    Tensor x0 = scale(sub(z, scale(eps_hat, s)), 1.0 / a);
    z = solver_step_2m(z, x0, (i > j0) ? &x0_prev : nullptr, grid, i + 1);
    x0_prev = x0;
  }
  return z;
}

}  // namespace progdit
