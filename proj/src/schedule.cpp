#include "progdit/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "progdit/errors.hpp"

namespace progdit {

namespace {

// lin-comb helper: out = ca*a + cb*b, elementwise, shape-checked
Tensor lincomb(double ca, const Tensor& a, double cb, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  return add(scale(a, ca), scale(b, cb));
}

}  // namespace

NoiseSchedule NoiseSchedule::cosine(int n_steps, double s) {
  if (n_steps < 1) throw ConfigError("NoiseSchedule: n_steps must be >= 1");
  NoiseSchedule ns;
  ns.alpha_bar_.resize(static_cast<size_t>(n_steps) + 1);
  const double f0 = std::cos((s / (1.0 + s)) * std::numbers::pi / 2.0);
  for (int t = 0; t <= n_steps; ++t) {
    const double x = ((static_cast<double>(t) / n_steps) + s) / (1.0 + s);
    const double f = std::cos(x * std::numbers::pi / 2.0);
    ns.alpha_bar_[static_cast<size_t>(t)] = (f * f) / (f0 * f0);
  }
  ns.alpha_bar_[0] = 1.0;  // clean-data endpoint exact
  return ns;
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > n_steps())
    throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [0," +
                            std::to_string(n_steps()) + "]");
  return alpha_bar_[static_cast<size_t>(t)];
}

std::pair<double, double> NoiseSchedule::alpha_sigma(int t) const {
  const double ab = alpha_bar(t);
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

std::pair<double, double> NoiseSchedule::alpha_sigma_cont(double t) const {
  if (t < 0.0 || t > static_cast<double>(n_steps()))
    throw std::out_of_range("NoiseSchedule: continuous t outside range");
  const int lo = static_cast<int>(std::floor(t));
  const int hi = std::min(lo + 1, n_steps());
  const double w = t - lo;
  const double ab = (1.0 - w) * alpha_bar_[static_cast<size_t>(lo)] +
                    w * alpha_bar_[static_cast<size_t>(hi)];
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

Tensor NoiseSchedule::q_sample(const Tensor& z0, int t, const Tensor& eps) const {
  auto [a, s] = alpha_sigma(t);
  return lincomb(a, z0, s, eps, "q_sample");
}

Tensor NoiseSchedule::v_target(const Tensor& z0, const Tensor& eps, int t) const {
  auto [a, s] = alpha_sigma(t);
  return lincomb(a, eps, -s, z0, "v_target");
}

Tensor NoiseSchedule::x0_from_v(const Tensor& z_t, const Tensor& v, int t) const {
  auto [a, s] = alpha_sigma(t);
  return x0_from_v_at(z_t, v, a, s);
}

Tensor NoiseSchedule::eps_from_v(const Tensor& z_t, const Tensor& v, int t) const {
  auto [a, s] = alpha_sigma(t);
  return eps_from_v_at(z_t, v, a, s);
}

Tensor NoiseSchedule::x0_from_v_at(const Tensor& z_t, const Tensor& v, double alpha,
                                   double sigma) {
  return lincomb(alpha, z_t, -sigma, v, "x0_from_v");
}

Tensor NoiseSchedule::eps_from_v_at(const Tensor& z_t, const Tensor& v, double alpha,
                                    double sigma) {
  return lincomb(sigma, z_t, alpha, v, "eps_from_v");
}

double NoiseSchedule::sigma_ratio(int t) const {
  const double ab = alpha_bar(t);
  return std::sqrt((1.0 - ab) / ab);
}

double NoiseSchedule::t_of_sigma_ratio(double ratio) const {
  if (ratio <= 0.0) return 0.0;
  const double target = 1.0 / (1.0 + ratio * ratio);  // alpha_bar at that ratio
  const int n = n_steps();
  if (target >= alpha_bar_[0]) return 0.0;
  if (target <= alpha_bar_[static_cast<size_t>(n)]) return static_cast<double>(n);
  // alpha_bar is strictly decreasing; find the bracketing interval
  int lo = 0, hi = n;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (alpha_bar_[static_cast<size_t>(mid)] > target)
      lo = mid;
    else
      hi = mid;
  }
  const double a0 = alpha_bar_[static_cast<size_t>(lo)];
  const double a1 = alpha_bar_[static_cast<size_t>(hi)];
  const double w = (a0 - target) / (a0 - a1);
  return static_cast<double>(lo) + w;
}

SigmaGrid karras_sigmas(int n, double sigma_min, double sigma_max, double rho) {
  if (n < 2) throw ConfigError("karras_sigmas: n must be >= 2");
  if (!(sigma_min > 0.0) || !(sigma_min < sigma_max))
    throw ConfigError("karras_sigmas: need 0 < sigma_min < sigma_max");
  if (!(rho > 0.0)) throw ConfigError("karras_sigmas: rho must be positive");
  SigmaGrid g;
  g.rho = rho;
  g.n_steps = n;
  g.sigmas.resize(static_cast<size_t>(n) + 1);
  const double pmax = std::pow(sigma_max, 1.0 / rho);
  const double pmin = std::pow(sigma_min, 1.0 / rho);
  for (int i = 0; i < n; ++i) {
    const double w = static_cast<double>(i) / (n - 1);
    g.sigmas[static_cast<size_t>(i)] = std::pow(pmax + w * (pmin - pmax), rho);
  }
  g.sigmas[0] = sigma_max;                       // endpoints exact
  g.sigmas[static_cast<size_t>(n) - 1] = sigma_min;
  g.sigmas[static_cast<size_t>(n)] = 0.0;
  for (int i = 1; i < n; ++i)
    if (!(g.sigmas[static_cast<size_t>(i)] < g.sigmas[static_cast<size_t>(i) - 1]))
      throw NumericError("karras_sigmas: grid not strictly decreasing");
  return g;
}

}  // namespace progdit
