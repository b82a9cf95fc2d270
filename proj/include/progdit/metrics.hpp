#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "progdit/image.hpp"

namespace progdit {

double mse(const Image& a, const Image& b);
// 10*log10(max_val^2 / mse); +inf sentinel when mse == 0
double psnr(const Image& a, const Image& b, double max_val = 1.0);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double max_val = 1.0;
};

// gaussian-windowed SSIM, symmetric (reflected) padding, mean over the map
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

struct TTestResult {
  double t = 0.0;
  double p = 0.5;
  int64_t df = 0;
  bool degenerate = false;  // zero-variance differences
};

enum class TailDirection { kGreater, kLess };

// paired one-sided t-test on matched samples x, y (d = x - y)
TTestResult paired_one_sided_ttest(const std::vector<double>& x, const std::vector<double>& y,
                                   TailDirection direction);

// Student-t CDF via the regularized incomplete beta function
double student_t_cdf(double t, double df);

// ---- stratified reporting ----

struct MetricSample {
  std::string pair_id;
  std::string subject_id;
  std::string model;  // row label, e.g. "generated" vs "identity-baseline"
  double ssim = 0.0;
  double psnr_db = 0.0;
  double mse = 0.0;
  double delta_t = 0.0;
  std::string progression_group;  // "CN to MCI" style
};

struct ReportCell {
  std::string table;  // "overall" | "group" | "interval"
  std::string row;    // group name or interval bin
  std::string model;
  std::string metric;  // ssim | psnr | mse
  double mean = 0.0;
  double sd = 0.0;
  int64_t n_slices = 0;
  int64_t n_subjects = 0;
  int64_t n_inf_excluded = 0;  // +inf psnr entries excluded from mean/sd
  double p_value = -1.0;       // vs the reference model; -1 when not computed
};

struct StratifiedReport {
  std::vector<ReportCell> cells;
  std::string reference_model;

  std::string to_text() const;  // aligned human-readable tables
  std::string to_csv() const;
};

// mean +/- sd per (model x metric) overall, per progression group and per
// interval bin; paired one-sided t-tests of every model against
// reference_model on the overall slice set
StratifiedReport stratified_report(const std::vector<MetricSample>& samples,
                                   const std::string& reference_model);

// "0.8739 ± 0.0761" (psnr rendered with two decimals)
std::string format_mean_sd(double mean, double sd, const std::string& metric);

}  // namespace progdit
