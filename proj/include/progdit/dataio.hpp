#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "progdit/conditioning.hpp"
#include "progdit/image.hpp"

namespace progdit {

// ---- longitudinal records ----

struct VisitRecord {
  std::string subject_id;
  int visit_month = 0;  // relative to the first visit
  Diagnosis diagnosis = Diagnosis::kCN;
  std::array<std::optional<double>, kNumScores> scores{};
  // demographics are per subject (age at baseline)
  double age_years = 0.0;
  bool sex_female = false;
  double education_years = 0.0;
};

// reassigns any severity reversion to the most recent prior diagnosis that
// keeps the sequence non-decreasing (CN < MCI < AD)
std::vector<Diagnosis> enforce_monotonic_diagnosis(const std::vector<Diagnosis>& seq);
void enforce_monotonic_diagnosis(std::vector<VisitRecord>& visits);

struct VisitPair {
  std::string subject_id;
  std::string pair_id;
  VisitRecord baseline;
  VisitRecord followup;
  double delta_t_months = 0.0;
  std::array<std::optional<double>, kNumScores> score_deltas{};
  int slice_index = 0;
};

// (first visit, each later visit); visits must be date-sorted and QC'd.
// all_pairs additionally emits every (earlier, later) combination
std::vector<VisitPair> pair_visits(const std::vector<VisitRecord>& visits,
                                   bool all_pairs = false);

PromptRecord prompt_record_for(const VisitPair& pair);

// ---- synthetic progression phantoms ----

struct PhantomParams {
  uint64_t seed = 0;
  double center_x = 32.0, center_y = 32.0;
  double brain_a = 26.0, brain_b = 22.0;  // ellipse semi-axes, pixels
  double vent_a = 6.0, vent_b = 4.0;      // baseline ventricle semi-axes
  double band_width = 3.0;                // cortical band
  double noise_level = 0.004;
  double max_progression = 1.2;

  static PhantomParams for_subject(uint64_t subject_seed, int64_t image_size,
                                   double noise_level);
  void validate() const;  // ventricle must stay inside the brain at max p
};

// monthly ventricular growth rate per diagnosis
double progression_rate(Diagnosis d);

// bright brain ellipse, dark ventricle growing with progression
// p = rate(diagnosis) * delta_t, cortical band thinning as p grows
Image phantom_generate(const PhantomParams& params, Diagnosis diagnosis, double delta_t_months,
                       int64_t size);

// dark-pixel count within the central disk; robust ventricle-size proxy
int64_t ventricle_area(const Image& img, double thresh = 0.45, double radius_frac = 0.55);

// ---- intensity standardization ----

Image minmax_image(const Image& img);  // constant image -> all 0.5 with warning
Image histogram_match(const Image& src, const Image& ref, int n_bins = 256);

// ---- splitting / stratification ----

std::unordered_map<std::string, std::string> participant_split(
    const std::vector<std::string>& subjects,
    const std::vector<std::pair<std::string, double>>& fractions, uint64_t seed);

// [0,12) [12,24) [24,36) [36,inf)
int interval_bin(double delta_t_months);
std::string interval_bin_name(int bin);
inline constexpr int kNumIntervalBins = 4;

// ---- manifest ----

struct ManifestRow {
  std::string subject_id;
  std::string pair_id;
  int slice_index = 0;
  std::string baseline_path;
  std::string target_path;
  std::string prompt;
  double delta_t = 0.0;
  std::string diagnosis_baseline;
  std::string diagnosis_target;
  std::string split;
  std::array<std::optional<double>, kNumScores> score_deltas{};
  std::array<int, kNumScores> masks{};
  double age = 0.0;
  std::string sex;  // "F" | "M"
  double education = 0.0;

  PromptRecord to_prompt_record() const;
};

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);
std::vector<ManifestRow> read_manifest(const std::string& path);

// ---- cohort generation ----

struct CohortConfig {
  int subjects = 120;
  int visits_per_subject = 4;
  int image_size = 64;
  double noise_level = 0.004;
  double train_fraction = 0.8;
  bool all_pairs = false;
  uint64_t seed = 7;
};

struct GeneratedCohort {
  std::vector<ManifestRow> rows;
  int subjects = 0;
  int skipped_subjects = 0;
  std::vector<std::string> log_lines;
};

// writes PGM images + manifest.jsonl + generation log under out_dir
GeneratedCohort phantom_gen(const CohortConfig& cfg, const std::string& out_dir);

// ranges fitted over the training rows only
FeatureRanges fit_ranges(const std::vector<ManifestRow>& rows, const std::string& split);

// noise-free expected score deltas of the phantom cohort's score model, for
// counterfactual conditioning at arbitrary delta_t
std::array<std::optional<double>, kNumScores> expected_score_deltas(Diagnosis d0, Diagnosis d1,
                                                                    double delta_t_months);

}  // namespace progdit
