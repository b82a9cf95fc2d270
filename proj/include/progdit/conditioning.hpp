#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "progdit/params.hpp"
#include "progdit/tensor.hpp"

namespace progdit {

// ---- clinical record vocabulary ----

enum class Diagnosis : int { kCN = 0, kMCI = 1, kAD = 2 };

Diagnosis parse_diagnosis(const std::string& s);
std::string diagnosis_name(Diagnosis d);
inline int severity(Diagnosis d) { return static_cast<int>(d); }

inline constexpr size_t kNumScores = 13;
// canonical order; index is the slot in score-delta vectors and masks
const std::array<std::string, kNumScores>& score_names();

struct PromptRecord {
  Diagnosis diagnosis_baseline = Diagnosis::kCN;
  Diagnosis diagnosis_target = Diagnosis::kCN;
  double age_years = 0.0;
  bool sex_female = false;
  double education_years = 0.0;
  double delta_t_months = 0.0;
  std::array<std::optional<double>, kNumScores> score_deltas{};
};

// prompt template v1; deterministic field order, absent scores omitted
inline constexpr const char* kPromptTemplateVersion = "v1";
std::string build_prompt(const PromptRecord& rec);

// ---- tokenizer ----

struct TokenSeq {
  std::vector<int32_t> ids;    // padded to max_len with id 0
  std::vector<double> mask;    // 1 for real tokens
};

// case-folded alnum runs ('-' kept when it starts a number), FNV-1a hashed
// into [1, vocab); id 0 is the pad token
TokenSeq tokenize(const std::string& text, int64_t max_len, int64_t vocab);

struct TokenizedPrompt {
  TokenSeq clip;
  TokenSeq t5;
};

// ---- metadata normalization ----

// per-feature min/max fitted on the training split only
class FeatureRanges {
 public:
  void fit_feature(const std::string& name, double lo, double hi);
  // (x - lo) / (hi - lo) clamped to [0,1]; degenerate range gives 0.5
  double normalize(const std::string& name, double value) const;
  bool degenerate(const std::string& name) const;
  bool has(const std::string& name) const;

  void set_fit_source(const std::string& s) { fit_source_ = s; }
  const std::string& fit_source() const { return fit_source_; }

  void save(const std::string& path) const;
  static FeatureRanges load(const std::string& path);
  std::string to_string() const;
  static FeatureRanges from_string(const std::string& text);

 private:
  struct Range {
    double lo = 0.0, hi = 1.0;
  };
  std::vector<std::pair<std::string, Range>> ranges_;
  std::string fit_source_ = "unset";
};

double minmax_normalize(double value, double lo, double hi);

struct AuxMetadata {
  std::vector<double> values;  // demographics(3) | dt(1) | 13 deltas | 13 masks
};
inline constexpr size_t kDemographicsLen = 3;
inline constexpr size_t kAmdLen = kDemographicsLen + 1 + kNumScores + kNumScores;

AuxMetadata build_amd(const PromptRecord& rec, const FeatureRanges& ranges);
// neutral metadata for the unconditional branch: all 0.5, masks 0
AuxMetadata neutral_amd();

// source/target resolution descriptor, min-max normalized by res_norm_max
std::vector<double> make_v_res(int64_t src_h, int64_t src_w, int64_t tgt_h, int64_t tgt_w,
                               double res_norm_max);

// ---- toy dual text encoders + fusion ----

struct CondConfig {
  int64_t clip_dim = 64;
  int64_t clip_len = 16;
  int64_t t5_dim = 128;
  int64_t t5_len = 32;
  int64_t vocab = 4096;
  double res_norm_max = 512.0;
};

struct EncodedCondition {
  Tensor fused;                  // (clip_len + t5_len) x clip_dim
  std::vector<double> key_mask;  // same row count; 1 = attend
  Tensor y_pooled;               // [t5_dim]
  Tensor amd;                    // [kAmdLen]
  Tensor v_res;                  // [4]
};

// Embedding table + learned positions + one pre-LN transformer block each,
// then the T5 path is projected into CLIP space and concatenated (sequence
// dimension) to form the cross-attention context.
class ConditioningEncoder {
 public:
  ConditioningEncoder(CondConfig cfg, ParamStore& store);
  void init_params(Rng& rng);

  TokenizedPrompt tokenize_prompt(const std::string& text) const;
  EncodedCondition encode(const TokenizedPrompt& toks, const AuxMetadata& amd,
                          const std::vector<double>& v_res) const;

  const CondConfig& config() const { return cfg_; }

 private:
  Tensor encoder_block(const std::string& prefix, const TokenSeq& toks, int64_t dim,
                       int64_t len) const;

  CondConfig cfg_;
  ParamStore* store_;
};

// t_emb + MLP(v_meta) with the 4x-hidden intermediate
class GlobalConditioner {
 public:
  GlobalConditioner(int64_t hidden, const CondConfig& cond_cfg, ParamStore& store);
  void init_params(Rng& rng);

  // sinusoidal timestep embedding run through a 2-layer MLP
  Tensor timestep_embedding(double t) const;
  Tensor c_global(double t, const EncodedCondition& ec) const;

  int64_t meta_dim() const { return meta_dim_; }

 private:
  int64_t hidden_;
  int64_t meta_dim_;
  ParamStore* store_;
};

}  // namespace progdit
