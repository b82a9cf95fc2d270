#include "progdit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "progdit/dataio.hpp"
#include "progdit/errors.hpp"

namespace progdit {

namespace {

void require_same_size(const Image& a, const Image& b, const char* op) {
  if (a.h != b.h || a.w != b.w)
    throw std::invalid_argument(std::string(op) + ": image sizes differ (" +
                                std::to_string(a.h) + "x" + std::to_string(a.w) + " vs " +
                                std::to_string(b.h) + "x" + std::to_string(b.w) + ")");
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_size(a, b, "mse");
  double acc = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double d = a.px[i] - b.px[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.px.size());
}

double psnr(const Image& a, const Image& b, double max_val) {
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / m);
}

// ---- SSIM ----

namespace {

// symmetric reflection (edge included), valid for any index
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * n;
  i = ((i % period) + period) % period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(int window, double sigma) {
  std::vector<double> k(static_cast<size_t>(window));
  const double c = (window - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    k[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// separable gaussian filter with reflected borders
std::vector<double> gauss_filter(const std::vector<double>& img, int64_t h, int64_t w,
                                 const std::vector<double>& k) {
  const int64_t r = static_cast<int64_t>(k.size()) / 2;
  std::vector<double> tmp(static_cast<size_t>(h * w), 0.0);
  std::vector<double> out(static_cast<size_t>(h * w), 0.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] *
               img[static_cast<size_t>(y * w + reflect_index(x + i, w))];
      tmp[static_cast<size_t>(y * w + x)] = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int64_t i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] *
               tmp[static_cast<size_t>(reflect_index(y + i, h) * w + x)];
      out[static_cast<size_t>(y * w + x)] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
  require_same_size(a, b, "ssim");
  if (a.h < cfg.window || a.w < cfg.window)
    std::cerr << "[warn] ssim: image smaller than the window, borders are fully reflected\n";
  const auto k = gaussian_kernel(cfg.window, cfg.sigma);
  const int64_t h = a.h, w = a.w;
  std::vector<double> aa(a.px.size()), bb(a.px.size()), ab(a.px.size());
  for (size_t i = 0; i < a.px.size(); ++i) {
    aa[i] = a.px[i] * a.px[i];
    bb[i] = b.px[i] * b.px[i];
    ab[i] = a.px[i] * b.px[i];
  }
  const auto mu_a = gauss_filter(a.px, h, w, k);
  const auto mu_b = gauss_filter(b.px, h, w, k);
  const auto m_aa = gauss_filter(aa, h, w, k);
  const auto m_bb = gauss_filter(bb, h, w, k);
  const auto m_ab = gauss_filter(ab, h, w, k);
  const double c1 = (cfg.k1 * cfg.max_val) * (cfg.k1 * cfg.max_val);
  const double c2 = (cfg.k2 * cfg.max_val) * (cfg.k2 * cfg.max_val);
  double acc = 0.0;
  for (size_t i = 0; i < a.px.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    acc += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(a.px.size());
}

// ---- t distribution ----

namespace {

// regularized incomplete beta via Lentz continued fraction
double betacf(double a, double b, double x) {
  const double eps = 3e-16, fpmin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double an = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + an * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + an / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    an = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + an * d;
    if (std::abs(d) < fpmin) d = fpmin;
    c = 1.0 + an / c;
    if (std::abs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) break;
  }
  return h;
}

double betai(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_cdf(double t, double df) {
  const double x = df / (df + t * t);
  const double p = 0.5 * betai(df / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - p : p;
}

TTestResult paired_one_sided_ttest(const std::vector<double>& x, const std::vector<double>& y,
                                   TailDirection direction) {
  if (x.size() != y.size()) throw std::invalid_argument("ttest: length mismatch");
  const int64_t n = static_cast<int64_t>(x.size());
  if (n < 2) throw std::invalid_argument("ttest: need n >= 2");
  double mean = 0.0;
  for (size_t i = 0; i < x.size(); ++i) mean += x[i] - y[i];
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = (x[i] - y[i]) - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  TTestResult res;
  res.df = n - 1;
  if (var == 0.0) {
    res.degenerate = true;
    if (mean == 0.0) {
      res.t = 0.0;
      res.p = 0.5;
    } else {
      const bool matches = (direction == TailDirection::kGreater) == (mean > 0.0);
      res.t = mean > 0.0 ? std::numeric_limits<double>::infinity()
                         : -std::numeric_limits<double>::infinity();
      res.p = matches ? 0.0 : 1.0;
    }
    return res;
  }
  res.t = mean / std::sqrt(var / static_cast<double>(n));
  const double cdf = student_t_cdf(res.t, static_cast<double>(res.df));
  res.p = direction == TailDirection::kGreater ? 1.0 - cdf : cdf;
  return res;
}

// ---- stratified report ----

std::string format_mean_sd(double mean, double sd, const std::string& metric) {
  char buf[96];
  if (std::isinf(mean)) return "inf";
  if (metric == "psnr")
    std::snprintf(buf, sizeof(buf), "%.2f ± %.3f", mean, sd);
  else
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, sd);
  return buf;
}

namespace {

struct Agg {
  std::vector<double> values;
  std::set<std::string> subjects;
  int64_t inf_excluded = 0;

  void add(double v, const std::string& subject) {
    if (std::isinf(v)) {
      ++inf_excluded;
    } else {
      values.push_back(v);
    }
    subjects.insert(subject);
  }
  double mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / static_cast<double>(values.size());
  }
  double sd() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

double metric_value(const MetricSample& s, const std::string& metric) {
  if (metric == "ssim") return s.ssim;
  if (metric == "psnr") return s.psnr_db;
  return s.mse;
}

}  // namespace

StratifiedReport stratified_report(const std::vector<MetricSample>& samples,
                                   const std::string& reference_model) {
  StratifiedReport rep;
  rep.reference_model = reference_model;
  const char* metrics[3] = {"ssim", "psnr", "mse"};

  std::vector<std::string> models;
  for (const auto& s : samples)
    if (std::find(models.begin(), models.end(), s.model) == models.end())
      models.push_back(s.model);

  // matched per-pair values for the paired tests
  std::map<std::string, std::map<std::string, const MetricSample*>> by_model_pair;
  for (const auto& s : samples) by_model_pair[s.model][s.pair_id] = &s;

  auto emit = [&](const std::string& table, const std::string& row, const std::string& model,
                  auto filter) {
    for (const auto* metric : metrics) {
      Agg agg;
      for (const auto& s : samples) {
        if (s.model != model || !filter(s)) continue;
        agg.add(metric_value(s, metric), s.subject_id);
      }
      ReportCell cell;
      cell.table = table;
      cell.row = row;
      cell.model = model;
      cell.metric = metric;
      cell.mean = agg.mean();
      cell.sd = agg.sd();
      cell.n_slices = static_cast<int64_t>(agg.values.size()) + agg.inf_excluded;
      cell.n_subjects = static_cast<int64_t>(agg.subjects.size());
      cell.n_inf_excluded = agg.inf_excluded;
      // paired one-sided test vs the reference on the overall table
      if (table == "overall" && model != reference_model &&
          by_model_pair.count(reference_model)) {
        std::vector<double> xs, ys;
        for (const auto& [pid, sp] : by_model_pair[model]) {
          auto it = by_model_pair[reference_model].find(pid);
          if (it == by_model_pair[reference_model].end()) continue;
          const double a = metric_value(*sp, metric);
          const double bv = metric_value(*it->second, metric);
          if (std::isinf(a) || std::isinf(bv)) continue;
          xs.push_back(a);
          ys.push_back(bv);
        }
        if (xs.size() >= 2) {
          // is the reference better? ssim/psnr: greater; mse: less
          const auto dir = std::string(metric) == "mse" ? TailDirection::kLess
                                                        : TailDirection::kGreater;
          cell.p_value = paired_one_sided_ttest(ys, xs, dir).p;
        }
      }
      rep.cells.push_back(std::move(cell));
    }
  };

  for (const auto& model : models) {
    emit("overall", "all", model, [](const MetricSample&) { return true; });
    std::set<std::string> groups;
    for (const auto& s : samples) groups.insert(s.progression_group);
    for (const auto& g : groups)
      emit("group", g, model, [&](const MetricSample& s) { return s.progression_group == g; });
    for (int b = 0; b < kNumIntervalBins; ++b)
      emit("interval", interval_bin_name(b), model,
           [&](const MetricSample& s) { return interval_bin(s.delta_t) == b; });
  }
  return rep;
}

std::string StratifiedReport::to_text() const {
  std::ostringstream os;
  auto section = [&](const std::string& table, const std::string& title) {
    os << title << "\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %-12s %-20s %-22s %-22s %-22s %6s %6s\n", "row", "model",
                  "SSIM", "PSNR", "MSE", "n", "subj");
    os << buf;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& c : cells) {
      if (c.table != table) continue;
      if (!seen.insert({c.row, c.model}).second) continue;
      std::string vals[3];
      int64_t n = 0, subj = 0;
      double pv = -1.0;
      for (const auto& c2 : cells) {
        if (c2.table != table || c2.row != c.row || c2.model != c.model) continue;
        const int idx = c2.metric == "ssim" ? 0 : c2.metric == "psnr" ? 1 : 2;
        vals[idx] = c2.n_slices == 0 ? "—" : format_mean_sd(c2.mean, c2.sd, c2.metric);
        if (c2.metric == "psnr" && c2.n_inf_excluded > 0)
          vals[idx] += " (" + std::to_string(c2.n_inf_excluded) + " inf)";
        n = c2.n_slices;
        subj = c2.n_subjects;
        if (c2.metric == "ssim") pv = c2.p_value;
      }
      std::snprintf(buf, sizeof(buf), "  %-12s %-20s %-22s %-22s %-22s %6lld %6lld", c.row.c_str(),
                    c.model.c_str(), vals[0].c_str(), vals[1].c_str(), vals[2].c_str(),
                    static_cast<long long>(n), static_cast<long long>(subj));
      os << buf;
      if (pv >= 0.0) {
        std::snprintf(buf, sizeof(buf), "  p(ssim)=%.4g", pv);
        os << buf;
      }
      os << "\n";
    }
    os << "\n";
  };
  section("overall", "== overall ==");
  section("group", "== progression groups ==");
  section("interval", "== follow-up interval bins ==");
  return os.str();
}

std::string StratifiedReport::to_csv() const {
  std::ostringstream os;
  os << "table,row,model,metric,mean,sd,n_slices,n_subjects,n_inf_excluded,p_value\n";
  char buf[256];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%.10g,%.10g,%lld,%lld,%lld,%.10g\n",
                  c.table.c_str(), c.row.c_str(), c.model.c_str(), c.metric.c_str(), c.mean,
                  c.sd, static_cast<long long>(c.n_slices),
                  static_cast<long long>(c.n_subjects),
                  static_cast<long long>(c.n_inf_excluded), c.p_value);
    os << buf;
  }
  return os.str();
}

}  // namespace progdit
