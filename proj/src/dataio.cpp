#include "progdit/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "progdit/errors.hpp"
#include "progdit/rng.hpp"

namespace progdit {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- QC ----

std::vector<Diagnosis> enforce_monotonic_diagnosis(const std::vector<Diagnosis>& seq) {
  std::vector<Diagnosis> out;
  out.reserve(seq.size());
  for (const Diagnosis d : seq) {
    if (!out.empty() && severity(d) < severity(out.back()))
      out.push_back(out.back());  // most recent prior diagnosis keeps severity non-decreasing
    else
      out.push_back(d);
  }
  return out;
}

void enforce_monotonic_diagnosis(std::vector<VisitRecord>& visits) {
  std::vector<Diagnosis> seq;
  seq.reserve(visits.size());
  for (const auto& v : visits) seq.push_back(v.diagnosis);
  const auto fixed = enforce_monotonic_diagnosis(seq);
  for (size_t i = 0; i < visits.size(); ++i) visits[i].diagnosis = fixed[i];
}

// ---- pairing ----

std::vector<VisitPair> pair_visits(const std::vector<VisitRecord>& visits, bool all_pairs) {
  std::vector<VisitPair> pairs;
  if (visits.size() < 2) return pairs;
  for (size_t b = 0; b < (all_pairs ? visits.size() - 1 : size_t{1}); ++b) {
    for (size_t f = b + 1; f < visits.size(); ++f) {
      const auto& base = visits[b];
      const auto& next = visits[f];
      if (next.visit_month < base.visit_month)
        throw DataError("pair_visits: visits not sorted for subject " + base.subject_id);
      VisitPair p;
      p.subject_id = base.subject_id;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "_P%02zu%02zu", b, f);
      p.pair_id = base.subject_id + buf;
      p.baseline = base;
      p.followup = next;
      p.delta_t_months = static_cast<double>(next.visit_month - base.visit_month);
      for (size_t i = 0; i < kNumScores; ++i) {
        if (base.scores[i].has_value() && next.scores[i].has_value())
          p.score_deltas[i] = *next.scores[i] - *base.scores[i];
      }
      pairs.push_back(std::move(p));
    }
  }
  return pairs;
}

PromptRecord prompt_record_for(const VisitPair& pair) {
  PromptRecord rec;
  rec.diagnosis_baseline = pair.baseline.diagnosis;
  rec.diagnosis_target = pair.followup.diagnosis;
  rec.age_years = pair.baseline.age_years;
  rec.sex_female = pair.baseline.sex_female;
  rec.education_years = pair.baseline.education_years;
  rec.delta_t_months = pair.delta_t_months;
  rec.score_deltas = pair.score_deltas;
  return rec;
}

// ---- phantoms ----

double progression_rate(Diagnosis d) {
  switch (d) {
    case Diagnosis::kCN:
      return 0.004;
    case Diagnosis::kMCI:
      return 0.010;
    case Diagnosis::kAD:
      return 0.016;
  }
  return 0.0;
}

PhantomParams PhantomParams::for_subject(uint64_t subject_seed, int64_t image_size,
                                         double noise_level) {
  Rng rng(subject_seed);
  const double s = static_cast<double>(image_size) / 64.0;
  PhantomParams p;
  p.seed = subject_seed;
  p.center_x = (32.0 + rng.uniform(-1.5, 1.5)) * s;
  p.center_y = (32.0 + rng.uniform(-1.5, 1.5)) * s;
  p.brain_a = rng.uniform(24.0, 28.0) * s;
  p.brain_b = rng.uniform(21.0, 24.0) * s;
  p.vent_a = rng.uniform(4.5, 7.0) * s;
  p.vent_b = rng.uniform(3.0, 5.0) * s;
  p.band_width = rng.uniform(2.5, 4.0) * s;
  p.noise_level = noise_level;
  p.validate();
  return p;
}

void PhantomParams::validate() const {
  const double grown_a = vent_a * (1.0 + max_progression);
  const double grown_b = vent_b * (1.0 + max_progression);
  if (grown_a >= brain_a * 0.8 || grown_b >= brain_b * 0.8)
    throw DataError("phantom: ventricle would not stay inside the brain ellipse");
}

namespace {

inline double soft_edge(double r) {
  // ~1 inside (r<1), ~0 outside, linear ramp of width ~0.12 in ellipse units
  const double v = (1.0 - r) / 0.06 + 0.5;
  return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
}

}  // namespace

Image phantom_generate(const PhantomParams& params, Diagnosis diagnosis, double delta_t_months,
                       int64_t size) {
  if (delta_t_months < 0) throw DataError("phantom: negative delta_t");
  params.validate();
  const double p =
      std::min(progression_rate(diagnosis) * delta_t_months, params.max_progression);
  const double va = params.vent_a * (1.0 + p);
  const double vb = params.vent_b * (1.0 + p);
  const double band_thin = 1.0 / (1.0 + 0.6 * p);

  Image img = Image::zeros(size, size);
  for (int64_t y = 0; y < size; ++y)
    for (int64_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - params.center_x;
      const double dy = static_cast<double>(y) - params.center_y;
      const double rb = std::sqrt((dx / params.brain_a) * (dx / params.brain_a) +
                                  (dy / params.brain_b) * (dy / params.brain_b));
      const double rv = std::sqrt((dx / va) * (dx / va) + (dy / vb) * (dy / vb));
      double v = 0.02;
      const double brain = soft_edge(rb);
      v = v * (1.0 - brain) + 0.75 * brain;
      // cortical band along the outer rim, thinning with progression
      const double band_r0 = 1.0 - params.band_width / params.brain_b * band_thin;
      if (rb > band_r0 && rb < 1.0) v += 0.15 * brain;
      const double vent = soft_edge(rv);
      v = v * (1.0 - vent) + 0.12 * vent;
      img.at(y, x) = v;
    }
  // additive noise, seeded per (subject, month)
  Rng nrng(params.seed * 1000003ull + static_cast<uint64_t>(std::llround(delta_t_months)));
  for (auto& v : img.px) {
    v += nrng.normal(0.0, params.noise_level);
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return img;
}

int64_t ventricle_area(const Image& img, double thresh, double radius_frac) {
  const double cx = static_cast<double>(img.w) / 2.0;
  const double cy = static_cast<double>(img.h) / 2.0;
  const double radius = radius_frac * static_cast<double>(std::min(img.h, img.w)) / 2.0;
  int64_t count = 0;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      const double dx = static_cast<double>(x) - cx;
      const double dy = static_cast<double>(y) - cy;
      if (dx * dx + dy * dy < radius * radius && img.at(y, x) < thresh) ++count;
    }
  return count;
}

// ---- intensity ----

Image minmax_image(const Image& img) {
  double lo = img.px[0], hi = img.px[0];
  for (double v : img.px) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Image out = img;
  if (!(hi > lo)) {
    std::cerr << "[warn] minmax_image: constant image, returning 0.5\n";
    for (auto& v : out.px) v = 0.5;
    return out;
  }
  for (auto& v : out.px) v = (v - lo) / (hi - lo);
  return out;
}

namespace {

std::vector<double> cdf_of(const Image& img, int n_bins) {
  std::vector<double> hist(static_cast<size_t>(n_bins), 0.0);
  for (double v : img.px) {
    int b = static_cast<int>(v * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    hist[static_cast<size_t>(b)] += 1.0;
  }
  double acc = 0.0;
  for (auto& h : hist) {
    acc += h;
    h = acc / static_cast<double>(img.numel());
  }
  return hist;
}

}  // namespace

Image histogram_match(const Image& src, const Image& ref, int n_bins) {
  double rlo = ref.px[0], rhi = ref.px[0];
  for (double v : ref.px) {
    rlo = std::min(rlo, v);
    rhi = std::max(rhi, v);
  }
  if (!(rhi > rlo)) {
    std::cerr << "[warn] histogram_match: constant reference, identity mapping\n";
    return src;
  }
  const auto cdf_s = cdf_of(src, n_bins);
  const auto cdf_r = cdf_of(ref, n_bins);
  // monotone lookup: source bin -> reference quantile
  std::vector<double> lut(static_cast<size_t>(n_bins));
  size_t j = 0;
  for (int i = 0; i < n_bins; ++i) {
    const double c = cdf_s[static_cast<size_t>(i)];
    while (j + 1 < cdf_r.size() && cdf_r[j] < c) ++j;
    // linear interpolation inside the reference bin
    const double c0 = j == 0 ? 0.0 : cdf_r[j - 1];
    const double c1 = cdf_r[j];
    const double frac = c1 > c0 ? (c - c0) / (c1 - c0) : 1.0;
    lut[static_cast<size_t>(i)] =
        (static_cast<double>(j) + std::clamp(frac, 0.0, 1.0)) / static_cast<double>(n_bins);
  }
  Image out = src;
  for (auto& v : out.px) {
    int b = static_cast<int>(v * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    v = lut[static_cast<size_t>(b)];
  }
  return out;
}

// ---- splits / bins ----

std::unordered_map<std::string, std::string> participant_split(
    const std::vector<std::string>& subjects,
    const std::vector<std::pair<std::string, double>>& fractions, uint64_t seed) {
  if (subjects.empty()) throw DataError("participant_split: no subjects");
  double total = 0.0;
  for (const auto& [name, f] : fractions) total += f;
  if (std::abs(total - 1.0) > 1e-9)
    throw ConfigError("participant_split: fractions must sum to 1");
  std::vector<std::string> order = subjects;
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::unordered_map<std::string, std::string> out;
  const size_t n = order.size();
  size_t start = 0;
  double cum = 0.0;
  for (size_t k = 0; k < fractions.size(); ++k) {
    cum += fractions[k].second;
    const size_t end = k + 1 == fractions.size()
                           ? n
                           : static_cast<size_t>(std::llround(cum * static_cast<double>(n)));
    for (size_t i = start; i < end && i < n; ++i) out[order[i]] = fractions[k].first;
    start = end;
  }
  return out;
}

int interval_bin(double delta_t_months) {
  if (delta_t_months < 0) throw DataError("interval_bin: negative delta_t");
  if (delta_t_months < 12) return 0;
  if (delta_t_months < 24) return 1;
  if (delta_t_months < 36) return 2;
  return 3;
}

std::string interval_bin_name(int bin) {
  switch (bin) {
    case 0:
      return "[0,12)";
    case 1:
      return "[12,24)";
    case 2:
      return "[24,36)";
    case 3:
      return "[36,inf)";
  }
  throw std::invalid_argument("interval_bin_name: bad bin");
}

// ---- manifest ----

PromptRecord ManifestRow::to_prompt_record() const {
  PromptRecord rec;
  rec.diagnosis_baseline = parse_diagnosis(diagnosis_baseline);
  rec.diagnosis_target = parse_diagnosis(diagnosis_target);
  rec.age_years = age;
  rec.sex_female = sex == "F";
  rec.education_years = education;
  rec.delta_t_months = delta_t;
  rec.score_deltas = score_deltas;
  return rec;
}

namespace {

json row_to_json(const ManifestRow& r) {
  json deltas = json::object();
  json masks = json::array();
  for (size_t i = 0; i < kNumScores; ++i) {
    deltas[score_names()[i]] =
        r.score_deltas[i].has_value() ? json(*r.score_deltas[i]) : json(nullptr);
    masks.push_back(r.masks[i]);
  }
  return json{{"subject_id", r.subject_id},
              {"pair_id", r.pair_id},
              {"slice_index", r.slice_index},
              {"baseline_path", r.baseline_path},
              {"target_path", r.target_path},
              {"prompt", r.prompt},
              {"delta_t", r.delta_t},
              {"diagnosis_baseline", r.diagnosis_baseline},
              {"diagnosis_target", r.diagnosis_target},
              {"split", r.split},
              {"score_deltas", deltas},
              {"masks", masks},
              {"demographics",
               json{{"age", r.age}, {"sex", r.sex}, {"education", r.education}}}};
}

ManifestRow row_from_json(const json& j) {
  ManifestRow r;
  r.subject_id = j.at("subject_id").get<std::string>();
  r.pair_id = j.at("pair_id").get<std::string>();
  r.slice_index = j.at("slice_index").get<int>();
  r.baseline_path = j.at("baseline_path").get<std::string>();
  r.target_path = j.at("target_path").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.delta_t = j.at("delta_t").get<double>();
  r.diagnosis_baseline = j.at("diagnosis_baseline").get<std::string>();
  r.diagnosis_target = j.at("diagnosis_target").get<std::string>();
  r.split = j.at("split").get<std::string>();
  const auto& deltas = j.at("score_deltas");
  const auto& masks = j.at("masks");
  for (size_t i = 0; i < kNumScores; ++i) {
    const auto& d = deltas.at(score_names()[i]);
    if (!d.is_null()) r.score_deltas[i] = d.get<double>();
    r.masks[i] = masks.at(i).get<int>();
  }
  const auto& demo = j.at("demographics");
  r.age = demo.at("age").get<double>();
  r.sex = demo.at("sex").get<std::string>();
  r.education = demo.at("education").get<double>();
  return r;
}

}  // namespace

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("manifest: cannot write " + path);
  for (const auto& r : rows) os << row_to_json(r).dump() << "\n";
  if (!os) throw DataError("manifest: write failed");
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path);
  std::vector<ManifestRow> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(row_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("manifest: line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

// ---- cohort generation ----

namespace {

struct ScoreModel {
  double base;
  double per_severity;  // added per severity level
  double per_p;         // added per unit progression
  double noise;
  double lo, hi;
};

// rough Table-1-like levels: enough structure for conditioning to matter
const ScoreModel kScoreModels[kNumScores] = {
    {0.5, 1.8, 2.5, 0.3, 0.0, 18.0},      // CDR-SB (up = worse)
    {29.0, -2.5, -3.5, 0.5, 0.0, 30.0},   // MMSE
    {26.0, -3.5, -3.0, 0.6, 0.0, 30.0},   // MoCA
    {0.5, 5.5, 6.0, 0.8, 0.0, 30.0},      // FAQ
    {46.0, -9.0, -8.0, 2.0, 0.0, 75.0},   // RAVLT Immediate
    {5.8, -1.5, -1.5, 0.4, -5.0, 14.0},   // RAVLT Learning
    {3.6, 0.6, 0.8, 0.4, 0.0, 15.0},      // RAVLT Forgetting
    {35.0, 22.0, 15.0, 4.0, 0.0, 100.0},  // RAVLT Percent Forgetting
    {14.0, -4.5, -4.0, 0.8, 0.0, 25.0},   // LDELTOTAL
    {80.0, 42.0, 30.0, 8.0, 0.0, 300.0},  // TRABSCOR
    {5.0, 6.0, 6.0, 1.0, 0.0, 70.0},      // ADAS-Cog 11
    {8.0, 8.0, 8.0, 1.2, 0.0, 85.0},      // ADAS-Cog 13
    {2.5, 2.2, 2.0, 0.4, 0.0, 10.0},      // ADAS-Q4
};

const std::pair<Diagnosis, Diagnosis> kGroups[5] = {
    {Diagnosis::kCN, Diagnosis::kCN},
    {Diagnosis::kCN, Diagnosis::kMCI},
    {Diagnosis::kMCI, Diagnosis::kMCI},
    {Diagnosis::kMCI, Diagnosis::kAD},
    {Diagnosis::kAD, Diagnosis::kAD},
};

}  // namespace

GeneratedCohort phantom_gen(const CohortConfig& cfg, const std::string& out_dir) {
  if (cfg.subjects < 1) throw ConfigError("phantom_gen: subjects must be >= 1");
  if (cfg.visits_per_subject < 1) throw ConfigError("phantom_gen: visits must be >= 1");
  if (cfg.image_size % 8) throw ConfigError("phantom_gen: image_size must be divisible by 8");
  fs::create_directories(fs::path(out_dir) / "images");

  GeneratedCohort out;
  Rng master(cfg.seed);

  // fixed reference slice for histogram matching, from a reserved stream
  const PhantomParams ref_params =
      PhantomParams::for_subject(master.fork(0xABCDEF).next_u64(), cfg.image_size,
                                 cfg.noise_level);
  const Image reference =
      minmax_image(phantom_generate(ref_params, Diagnosis::kCN, 0.0, cfg.image_size));

  std::vector<std::string> subject_ids;
  std::vector<std::vector<VisitRecord>> subject_visits;
  std::vector<PhantomParams> subject_params;

  for (int s = 0; s < cfg.subjects; ++s) {
    Rng rng = master.fork(static_cast<uint64_t>(s) + 1);
    char sid[16];
    std::snprintf(sid, sizeof(sid), "S%04d", s);
    const auto [d0, d1] = kGroups[rng.uniform_index(5)];
    const int k = cfg.visits_per_subject;
    // visit months: gaps favor short intervals like real follow-up data
    std::vector<int> months{0};
    const int gap_choices[6] = {3, 6, 6, 12, 12, 24};
    while (static_cast<int>(months.size()) < k)
      months.push_back(months.back() + gap_choices[rng.uniform_index(6)]);
    const int transition = d0 == d1 ? k : 1 + static_cast<int>(rng.uniform_index(
                                              static_cast<uint64_t>(std::max(1, k - 1))));
    const double age = std::round(std::clamp(rng.normal(73.0, 6.0), 55.0, 90.0) * 10.0) / 10.0;
    const bool female = rng.bernoulli(0.5);
    const double edu = std::round(std::clamp(rng.normal(16.0, 2.5), 8.0, 20.0) * 10.0) / 10.0;
    const double subject_offset = rng.normal(0.0, 0.5);

    std::vector<VisitRecord> visits;
    for (int i = 0; i < k; ++i) {
      VisitRecord v;
      v.subject_id = sid;
      v.visit_month = months[static_cast<size_t>(i)];
      v.diagnosis = i < transition ? d0 : d1;
      v.age_years = age;
      v.sex_female = female;
      v.education_years = edu;
      const double p = progression_rate(v.diagnosis) * v.visit_month;
      for (size_t sc = 0; sc < kNumScores; ++sc) {
        if (rng.bernoulli(0.1)) continue;  // missing score
        const auto& m = kScoreModels[sc];
        const double val = m.base + m.per_severity * severity(v.diagnosis) + m.per_p * p +
                           m.noise * (rng.normal() + subject_offset * 0.3);
        v.scores[sc] = std::round(std::clamp(val, m.lo, m.hi) * 10.0) / 10.0;
      }
      visits.push_back(std::move(v));
    }
    enforce_monotonic_diagnosis(visits);
    subject_ids.push_back(sid);
    subject_visits.push_back(std::move(visits));
    subject_params.push_back(
        PhantomParams::for_subject(rng.fork(99).next_u64(), cfg.image_size, cfg.noise_level));
  }

  const auto split = participant_split(
      subject_ids, {{"train", cfg.train_fraction}, {"test", 1.0 - cfg.train_fraction}},
      master.fork(0x5715).next_u64());

  for (size_t s = 0; s < subject_ids.size(); ++s) {
    const auto& visits = subject_visits[s];
    auto pairs = pair_visits(visits, cfg.all_pairs);
    if (pairs.empty()) {
      out.log_lines.push_back("subject " + subject_ids[s] + ": " +
                              std::to_string(visits.size()) + " visit(s), no pairs emitted");
      ++out.skipped_subjects;
      continue;
    }
    // render + standardize each distinct visit image once
    std::unordered_map<int, std::string> visit_paths;
    for (const auto& v : visits) {
      if (visit_paths.count(v.visit_month)) continue;
      Image img = phantom_generate(subject_params[s], v.diagnosis,
                                   static_cast<double>(v.visit_month), cfg.image_size);
      img = histogram_match(minmax_image(img), reference);
      char name[64];
      std::snprintf(name, sizeof(name), "images/%s_m%03d.pgm", subject_ids[s].c_str(),
                    v.visit_month);
      write_pgm((fs::path(out_dir) / name).string(), img);
      visit_paths[v.visit_month] = name;
    }
    for (auto& p : pairs) {
      ManifestRow row;
      row.subject_id = p.subject_id;
      row.pair_id = p.pair_id;
      row.slice_index = 0;
      row.baseline_path = visit_paths.at(p.baseline.visit_month);
      row.target_path = visit_paths.at(p.followup.visit_month);
      row.prompt = build_prompt(prompt_record_for(p));
      row.delta_t = p.delta_t_months;
      row.diagnosis_baseline = diagnosis_name(p.baseline.diagnosis);
      row.diagnosis_target = diagnosis_name(p.followup.diagnosis);
      row.split = split.at(p.subject_id);
      row.score_deltas = p.score_deltas;
      for (size_t i = 0; i < kNumScores; ++i) row.masks[i] = p.score_deltas[i] ? 1 : 0;
      row.age = p.baseline.age_years;
      row.sex = p.baseline.sex_female ? "F" : "M";
      row.education = p.baseline.education_years;
      out.rows.push_back(std::move(row));
    }
  }
  out.subjects = static_cast<int>(subject_ids.size());

  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), out.rows);
  std::ofstream log((fs::path(out_dir) / "phantom-gen.log").string());
  for (const auto& l : out.log_lines) {
    log << l << "\n";
    std::cerr << "[phantom-gen] " << l << "\n";
  }
  return out;
}

std::array<std::optional<double>, kNumScores> expected_score_deltas(Diagnosis d0, Diagnosis d1,
                                                                    double delta_t_months) {
  std::array<std::optional<double>, kNumScores> out{};
  const double p1 = progression_rate(d1) * delta_t_months;
  for (size_t i = 0; i < kNumScores; ++i) {
    const auto& m = kScoreModels[i];
    const double base0 = m.base + m.per_severity * severity(d0);
    const double val1 = m.base + m.per_severity * severity(d1) + m.per_p * p1;
    out[i] = std::round((std::clamp(val1, m.lo, m.hi) - std::clamp(base0, m.lo, m.hi)) * 10.0) /
             10.0;
  }
  return out;
}

FeatureRanges fit_ranges(const std::vector<ManifestRow>& rows, const std::string& split) {
  FeatureRanges fr;
  fr.set_fit_source(split);
  auto fit = [&](const std::string& name, auto getter) {
    double lo = 1e300, hi = -1e300;
    bool any = false;
    for (const auto& r : rows) {
      if (r.split != split) continue;
      const auto v = getter(r);
      if (!v.has_value()) continue;
      lo = std::min(lo, *v);
      hi = std::max(hi, *v);
      any = true;
    }
    if (!any) {
      lo = 0.0;
      hi = 1.0;
    }
    fr.fit_feature(name, lo, hi);
  };
  using Opt = std::optional<double>;
  fit("age", [](const ManifestRow& r) { return Opt(r.age); });
  fit("education", [](const ManifestRow& r) { return Opt(r.education); });
  fit("delta_t", [](const ManifestRow& r) { return Opt(r.delta_t); });
  for (size_t i = 0; i < kNumScores; ++i)
    fit("delta_" + score_names()[i],
        [i](const ManifestRow& r) { return r.score_deltas[i]; });
  return fr;
}

}  // namespace progdit
