#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "progdit/metrics.hpp"
#include "progdit/rng.hpp"

using namespace progdit;

namespace {

Image random_image(Rng& rng, int64_t h, int64_t w) {
  Image img = Image::zeros(h, w);
  for (auto& v : img.px) v = rng.uniform();
  return img;
}

// brute-force SSIM oracle: explicit window loop per pixel with the same
// symmetric reflection as the implementation
int64_t reflect(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

double ssim_oracle(const Image& a, const Image& b, const SsimConfig& cfg = {}) {
  const int r = cfg.window / 2;
  std::vector<double> k(static_cast<size_t>(cfg.window));
  double ksum = 0;
  for (int i = 0; i < cfg.window; ++i) {
    k[static_cast<size_t>(i)] =
        std::exp(-(i - r) * (i - r) / (2.0 * cfg.sigma * cfg.sigma));
    ksum += k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= ksum;
  const double c1 = (cfg.k1 * cfg.max_val) * (cfg.k1 * cfg.max_val);
  const double c2 = (cfg.k2 * cfg.max_val) * (cfg.k2 * cfg.max_val);
  double acc = 0;
  for (int64_t y = 0; y < a.h; ++y)
    for (int64_t x = 0; x < a.w; ++x) {
      double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double wgt = k[static_cast<size_t>(dy + r)] * k[static_cast<size_t>(dx + r)];
          const double va = a.at(reflect(y + dy, a.h), reflect(x + dx, a.w));
          const double vb = b.at(reflect(y + dy, b.h), reflect(x + dx, b.w));
          mu_a += wgt * va;
          mu_b += wgt * vb;
          aa += wgt * va * va;
          bb += wgt * vb * vb;
          ab += wgt * va * vb;
        }
      const double var_a = aa - mu_a * mu_a;
      const double var_b = bb - mu_b * mu_b;
      const double cov = ab - mu_a * mu_b;
      acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  return acc / static_cast<double>(a.h * a.w);
}

// quadrature oracle for the one-sided p-value: integrate the t density
double t_density(double x, double df) {
  return std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) /
         std::sqrt(df * std::numbers::pi) * std::pow(1 + x * x / df, -(df + 1) / 2);
}

double simpson(double a, double b, double df, int n) {
  const double h = (b - a) / n;
  double s = t_density(a, df) + t_density(b, df);
  for (int i = 1; i < n; ++i) s += t_density(a + i * h, df) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

double p_greater_oracle(double t, double df) {
  // P(T > t) = 0.5 - integral_0^t density for t >= 0
  if (t >= 0) return 0.5 - simpson(0, t, df, 4000);
  return 0.5 + simpson(0, -t, df, 4000);
}

}  // namespace

TEST_CASE("mse and psnr basics") {
  Rng rng(1);
  Image a = random_image(rng, 8, 8);
  CHECK(mse(a, a) == 0.0);
  CHECK(std::isinf(psnr(a, a)));

  // checkerboard 0/1 against all-zero: half the pixels differ by 1
  Image cb = Image::zeros(8, 8);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) cb.at(y, x) = (x + y) % 2 ? 1.0 : 0.0;
  CHECK(mse(cb, Image::zeros(8, 8)) == 0.5);

  CHECK_THROWS_AS(mse(a, Image::zeros(4, 4)), std::invalid_argument);
}

TEST_CASE("psnr value pinned at the published mse scale") {
  // mse 0.0024 at max 1 -> 26.20 dB
  Image a = Image::zeros(10, 10);
  Image b = Image::zeros(10, 10);
  const double delta = std::sqrt(0.0024);
  for (auto& v : b.px) v = delta;
  CHECK(mse(a, b) == doctest::Approx(0.0024).epsilon(1e-12));
  CHECK(psnr(a, b) == doctest::Approx(26.20).epsilon(0.01 / 26.20));
}

TEST_CASE("psnr strictly decreasing in mse") {
  Image z = Image::zeros(6, 6);
  double prev = 1e30;
  for (double d : {0.01, 0.02, 0.05, 0.2}) {
    Image b = Image::zeros(6, 6);
    for (auto& v : b.px) v = d;
    const double p = psnr(z, b);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim identity, symmetry, anti-correlation") {
  Rng rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Image a = random_image(rng, 16, 16);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
    Image b = random_image(rng, 16, 16);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  }
  // binary image against its inversion: strongly negative
  Image bin = Image::zeros(32, 32);
  for (int64_t y = 0; y < 32; ++y)
    for (int64_t x = 0; x < 32; ++x) bin.at(y, x) = ((x / 4 + y / 4) % 2) ? 1.0 : 0.0;
  Image inv = bin;
  for (auto& v : inv.px) v = 1.0 - v;
  CHECK(ssim(bin, inv) < 0.0);
}

TEST_CASE("ssim matches the brute-force windowed oracle on 50 random pairs") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Image a = random_image(rng, 32, 32);
    Image b = random_image(rng, 32, 32);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-9);
  }
}

TEST_CASE("ssim handles images smaller than the window") {
  Rng rng(4);
  Image a = random_image(rng, 7, 7);
  Image b = random_image(rng, 7, 7);
  const double s = ssim(a, b);  // warns, reflects fully
  CHECK(std::isfinite(s));
  CHECK(std::abs(s - ssim_oracle(a, b)) < 1e-9);
}

TEST_CASE("paired t-test null case and degenerate differences") {
  std::vector<double> x{1, 2, 3, 4};
  auto res = paired_one_sided_ttest(x, x, TailDirection::kGreater);
  CHECK(res.t == 0.0);
  CHECK(res.p == 0.5);
  CHECK(res.degenerate);

  // d = [1,1,1,1]: sign-forced p
  std::vector<double> y{0, 1, 2, 3};
  res = paired_one_sided_ttest(x, y, TailDirection::kGreater);
  CHECK(res.degenerate);
  CHECK(res.p == 0.0);
  res = paired_one_sided_ttest(y, x, TailDirection::kGreater);
  CHECK(res.p == 1.0);
  res = paired_one_sided_ttest(x, y, TailDirection::kLess);
  CHECK(res.p == 1.0);
}

TEST_CASE("t-test p matches the quadrature oracle to 1e-6") {
  const std::vector<double> x{2.1, 1.3, 4.5, 0.7, 3.3};
  const std::vector<double> y{1.2, 1.5, 3.1, 0.2, 2.0};
  const auto res = paired_one_sided_ttest(x, y, TailDirection::kGreater);
  CHECK(res.df == 4);
  CHECK(std::abs(res.p - p_greater_oracle(res.t, 4.0)) < 1e-6);
  const auto less = paired_one_sided_ttest(x, y, TailDirection::kLess);
  CHECK(std::abs(less.p - (1.0 - p_greater_oracle(res.t, 4.0))) < 1e-6);

  // a few fixed t values against the oracle across df
  for (double t : {-2.5, -0.3, 0.0, 0.8, 1.9, 4.2})
    for (double df : {2.0, 4.0, 9.0, 30.0})
      CHECK(std::abs((1.0 - student_t_cdf(t, df)) - p_greater_oracle(t, df)) < 1e-6);
}

TEST_CASE("stratified report formatting and partition") {
  CHECK(format_mean_sd(0.8739, 0.0761, "ssim") == "0.8739 ± 0.0761");

  std::vector<MetricSample> samples;
  Rng rng(5);
  const char* groups[2] = {"CN to CN", "MCI to AD"};
  for (int i = 0; i < 12; ++i) {
    MetricSample s;
    s.pair_id = "P" + std::to_string(i);
    s.subject_id = "S" + std::to_string(i / 2);
    s.model = i % 2 ? "identity-baseline" : "generated";
    s.ssim = 0.7 + 0.02 * (i % 5);
    s.psnr_db = 20 + i;
    s.mse = 0.01;
    s.delta_t = (i % 4) * 11.0;
    s.progression_group = groups[i % 2];
    samples.push_back(s);
  }
  const auto rep = stratified_report(samples, "generated");
  // cell counts per table sum to the per-model totals
  int64_t overall = 0, by_group = 0, by_bin = 0;
  for (const auto& c : rep.cells) {
    if (c.metric != "ssim" || c.model != "generated") continue;
    if (c.table == "overall") overall += c.n_slices;
    if (c.table == "group") by_group += c.n_slices;
    if (c.table == "interval") by_bin += c.n_slices;
  }
  CHECK(overall == 6);
  CHECK(by_group == overall);
  CHECK(by_bin == overall);
  // single-sample cells render sd 0
  for (const auto& c : rep.cells)
    if (c.n_slices == 1) CHECK(c.sd == 0.0);
  // text rendering contains the +/- layout and p-values
  const std::string txt = rep.to_text();
  CHECK(txt.find("±") != std::string::npos);
  const std::string csv = rep.to_csv();
  CHECK(csv.find("table,row,model,metric") == 0);
}

TEST_CASE("infinite psnr excluded from aggregates with a counter") {
  std::vector<MetricSample> samples;
  for (int i = 0; i < 4; ++i) {
    MetricSample s;
    s.pair_id = "P" + std::to_string(i);
    s.subject_id = "S";
    s.model = "generated";
    s.ssim = 1.0;
    s.psnr_db = i == 0 ? std::numeric_limits<double>::infinity() : 30.0;
    s.mse = 0.0;
    s.delta_t = 1;
    s.progression_group = "CN to CN";
    samples.push_back(s);
  }
  const auto rep = stratified_report(samples, "generated");
  for (const auto& c : rep.cells)
    if (c.table == "overall" && c.metric == "psnr") {
      CHECK(c.n_inf_excluded == 1);
      CHECK(c.mean == doctest::Approx(30.0));
      CHECK(c.n_slices == 4);
    }
}
