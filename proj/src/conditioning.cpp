#include "progdit/conditioning.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "progdit/errors.hpp"

namespace progdit {

Diagnosis parse_diagnosis(const std::string& s) {
  if (s == "CN") return Diagnosis::kCN;
  if (s == "MCI") return Diagnosis::kMCI;
  if (s == "AD") return Diagnosis::kAD;
  throw DataError("unknown diagnosis label '" + s + "'");
}

std::string diagnosis_name(Diagnosis d) {
  switch (d) {
    case Diagnosis::kCN:
      return "CN";
    case Diagnosis::kMCI:
      return "MCI";
    case Diagnosis::kAD:
      return "AD";
  }
  return "?";
}

const std::array<std::string, kNumScores>& score_names() {
  static const std::array<std::string, kNumScores> names = {
      "CDR-SB",           "MMSE",                "MoCA",
      "FAQ",              "RAVLT-Immediate",     "RAVLT-Learning",
      "RAVLT-Forgetting", "RAVLT-PctForgetting", "LDELTOTAL",
      "TRABSCOR",         "ADAS-Cog11",          "ADAS-Cog13",
      "ADAS-Q4"};
  return names;
}

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

}  // namespace

std::string build_prompt(const PromptRecord& rec) {
  std::string out = "Brain MRI axial slice. Diagnosis " + diagnosis_name(rec.diagnosis_baseline) +
                    " to " + diagnosis_name(rec.diagnosis_target) + ". Follow-up " +
                    fmt_g(rec.delta_t_months) + " months. Age " + fmt_g(rec.age_years) + ", " +
                    (rec.sex_female ? "female" : "male") + ", education " +
                    fmt_g(rec.education_years) + " years.";
  std::string changes;
  for (size_t i = 0; i < kNumScores; ++i) {
    if (!rec.score_deltas[i].has_value()) continue;
    if (!changes.empty()) changes += ", ";
    changes += score_names()[i] + "=" + fmt_g(*rec.score_deltas[i]);
  }
  if (!changes.empty()) out += " Changes: " + changes + ".";
  return out;
}

TokenSeq tokenize(const std::string& text, int64_t max_len, int64_t vocab) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be >= 1");
  if (vocab < 2) throw std::invalid_argument("tokenize: vocab must be >= 2");
  std::vector<std::string> tokens;
  std::string cur;
  for (size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (c == '-' && cur.empty() && i + 1 < text.size() &&
               std::isdigit(static_cast<unsigned char>(text[i + 1]))) {
      cur += '-';  // signed number
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));

  TokenSeq seq;
  seq.ids.assign(static_cast<size_t>(max_len), 0);
  seq.mask.assign(static_cast<size_t>(max_len), 0.0);
  const size_t n = std::min(tokens.size(), static_cast<size_t>(max_len));
  for (size_t i = 0; i < n; ++i) {
    seq.ids[i] = static_cast<int32_t>(1 + fnv1a64(tokens[i]) % static_cast<uint64_t>(vocab - 1));
    seq.mask[i] = 1.0;
  }
  return seq;
}

// ---- FeatureRanges ----

void FeatureRanges::fit_feature(const std::string& name, double lo, double hi) {
  for (auto& [n, r] : ranges_) {
    if (n == name) {
      r = {lo, hi};
      return;
    }
  }
  ranges_.push_back({name, {lo, hi}});
}

bool FeatureRanges::has(const std::string& name) const {
  for (const auto& [n, r] : ranges_)
    if (n == name) return true;
  return false;
}

bool FeatureRanges::degenerate(const std::string& name) const {
  for (const auto& [n, r] : ranges_)
    if (n == name) return !(r.hi > r.lo);
  throw DataError("FeatureRanges: unknown feature '" + name + "'");
}

double FeatureRanges::normalize(const std::string& name, double value) const {
  for (const auto& [n, r] : ranges_)
    if (n == name) return minmax_normalize(value, r.lo, r.hi);
  throw DataError("FeatureRanges: unknown feature '" + name + "'");
}

double minmax_normalize(double value, double lo, double hi) {
  if (!(hi > lo)) return 0.5;  // degenerate range
  const double x = (value - lo) / (hi - lo);
  return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
}

std::string FeatureRanges::to_string() const {
  std::string out = "fit_source " + fit_source_ + "\n";
  out += std::string("template ") + kPromptTemplateVersion + "\n";
  char buf[160];
  for (const auto& [n, r] : ranges_) {
    std::snprintf(buf, sizeof(buf), "range %s %.17g %.17g\n", n.c_str(), r.lo, r.hi);
    out += buf;
  }
  return out;
}

FeatureRanges FeatureRanges::from_string(const std::string& text) {
  FeatureRanges fr;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "fit_source") {
      ls >> fr.fit_source_;
    } else if (kind == "range") {
      std::string name;
      double lo, hi;
      ls >> name >> lo >> hi;
      if (!ls) throw DataError("FeatureRanges: bad line '" + line + "'");
      fr.fit_feature(name, lo, hi);
    }
  }
  return fr;
}

void FeatureRanges::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("FeatureRanges: cannot write " + path);
  os << to_string();
}

FeatureRanges FeatureRanges::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("FeatureRanges: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

// ---- AMD ----

AuxMetadata build_amd(const PromptRecord& rec, const FeatureRanges& ranges) {
  AuxMetadata amd;
  amd.values.reserve(kAmdLen);
  amd.values.push_back(ranges.normalize("age", rec.age_years));
  amd.values.push_back(rec.sex_female ? 1.0 : 0.0);
  amd.values.push_back(ranges.normalize("education", rec.education_years));
  amd.values.push_back(ranges.normalize("delta_t", rec.delta_t_months));
  std::array<double, kNumScores> masks{};
  for (size_t i = 0; i < kNumScores; ++i) {
    if (rec.score_deltas[i].has_value()) {
      amd.values.push_back(ranges.normalize("delta_" + score_names()[i], *rec.score_deltas[i]));
      masks[i] = 1.0;
    } else {
      amd.values.push_back(0.5);  // unknown, distinguished by the mask bit
      masks[i] = 0.0;
    }
  }
  for (size_t i = 0; i < kNumScores; ++i) amd.values.push_back(masks[i]);
  return amd;
}

AuxMetadata neutral_amd() {
  AuxMetadata amd;
  amd.values.assign(kAmdLen, 0.5);
  for (size_t i = kDemographicsLen + 1 + kNumScores; i < kAmdLen; ++i) amd.values[i] = 0.0;
  return amd;
}

std::vector<double> make_v_res(int64_t src_h, int64_t src_w, int64_t tgt_h, int64_t tgt_w,
                               double res_norm_max) {
  return {minmax_normalize(static_cast<double>(src_h), 0.0, res_norm_max),
          minmax_normalize(static_cast<double>(src_w), 0.0, res_norm_max),
          minmax_normalize(static_cast<double>(tgt_h), 0.0, res_norm_max),
          minmax_normalize(static_cast<double>(tgt_w), 0.0, res_norm_max)};
}

// ---- toy encoders ----

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

Tensor linear_vec(const Tensor& x1d, const Tensor& w, const Tensor& b) {
  Tensor r = add_rowvec(matmul(reshape(x1d, {1, x1d.numel()}), w), b);
  return reshape(r, {r.numel()});
}

}  // namespace

ConditioningEncoder::ConditioningEncoder(CondConfig cfg, ParamStore& store)
    : cfg_(cfg), store_(&store) {
  const DType dt = store.dtype();
  auto enc = [&](const std::string& p, int64_t dim, int64_t len) {
    store.declare(p + ".embed", {cfg_.vocab, dim}, dt);
    store.declare(p + ".pos", {len, dim}, dt);
    store.declare(p + ".qkv_w", {dim, 3 * dim}, dt);
    store.declare(p + ".qkv_b", {3 * dim}, dt);
    store.declare(p + ".att_o_w", {dim, dim}, dt);
    store.declare(p + ".att_o_b", {dim}, dt);
    store.declare(p + ".ff1_w", {dim, 4 * dim}, dt);
    store.declare(p + ".ff1_b", {4 * dim}, dt);
    store.declare(p + ".ff2_w", {4 * dim, dim}, dt);
    store.declare(p + ".ff2_b", {dim}, dt);
  };
  enc("cond.clip", cfg_.clip_dim, cfg_.clip_len);
  enc("cond.t5", cfg_.t5_dim, cfg_.t5_len);
  store.declare("cond.fuse.w1", {cfg_.t5_dim, cfg_.clip_dim}, dt);
  store.declare("cond.fuse.b1", {cfg_.clip_dim}, dt);
  store.declare("cond.fuse.w2", {cfg_.clip_dim, cfg_.clip_dim}, dt);
  store.declare("cond.fuse.b2", {cfg_.clip_dim}, dt);
}

void ConditioningEncoder::init_params(Rng& rng) {
  for (auto& [name, t] : store_->items()) {
    if (name.rfind("cond.", 0) != 0) continue;
    if (name.ends_with("_b") || name.ends_with("b1") || name.ends_with("b2")) continue;
    fill_randn(t, rng, 0.02);
  }
}

Tensor ConditioningEncoder::encoder_block(const std::string& prefix, const TokenSeq& toks,
                                          int64_t dim, int64_t /*len*/) const {
  const auto& s = *store_;
  Tensor x = add(embedding(s.at(prefix + ".embed"), toks.ids), s.at(prefix + ".pos"));
  // single-head self-attention, pre-LN
  Tensor h = layer_norm(x, 1e-6);
  Tensor qkv = linear(h, s.at(prefix + ".qkv_w"), s.at(prefix + ".qkv_b"));
  Tensor q = narrow(qkv, 1, 0, dim);
  Tensor k = narrow(qkv, 1, dim, dim);
  Tensor v = narrow(qkv, 1, 2 * dim, dim);
  Tensor logits = scale(matmul(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dim)));
  Tensor att = matmul(softmax_lastdim(logits), v);
  x = add(x, linear(att, s.at(prefix + ".att_o_w"), s.at(prefix + ".att_o_b")));
  h = layer_norm(x, 1e-6);
  Tensor ff = linear(silu(linear(h, s.at(prefix + ".ff1_w"), s.at(prefix + ".ff1_b"))),
                     s.at(prefix + ".ff2_w"), s.at(prefix + ".ff2_b"));
  return add(x, ff);
}

TokenizedPrompt ConditioningEncoder::tokenize_prompt(const std::string& text) const {
  return {tokenize(text, cfg_.clip_len, cfg_.vocab), tokenize(text, cfg_.t5_len, cfg_.vocab)};
}

EncodedCondition ConditioningEncoder::encode(const TokenizedPrompt& toks, const AuxMetadata& amd,
                                             const std::vector<double>& v_res) const {
  const DType dt = store_->dtype();
  EncodedCondition ec;
  Tensor h_clip = encoder_block("cond.clip", toks.clip, cfg_.clip_dim, cfg_.clip_len);
  Tensor h_t5 = encoder_block("cond.t5", toks.t5, cfg_.t5_dim, cfg_.t5_len);

  // pooled T5: mask-weighted mean, full mean when the mask is empty
  double msum = 0.0;
  for (double m : toks.t5.mask) msum += m;
  std::vector<double> w(toks.t5.mask.size());
  for (size_t i = 0; i < w.size(); ++i)
    w[i] = msum > 0.0 ? toks.t5.mask[i] / msum : 1.0 / static_cast<double>(w.size());
  Tensor wrow = Tensor::from_values({1, static_cast<int64_t>(w.size())}, w, dt);
  ec.y_pooled = reshape(matmul(wrow, h_t5), {cfg_.t5_dim});

  // project T5 into CLIP width, concat along the sequence dimension
  const auto& s = *store_;
  Tensor proj = linear(silu(linear(h_t5, s.at("cond.fuse.w1"), s.at("cond.fuse.b1"))),
                       s.at("cond.fuse.w2"), s.at("cond.fuse.b2"));
  ec.fused = concat({h_clip, proj}, 0);

  ec.key_mask.reserve(toks.clip.mask.size() + toks.t5.mask.size());
  ec.key_mask.insert(ec.key_mask.end(), toks.clip.mask.begin(), toks.clip.mask.end());
  ec.key_mask.insert(ec.key_mask.end(), toks.t5.mask.begin(), toks.t5.mask.end());

  if (amd.values.size() != kAmdLen)
    throw std::invalid_argument("encode: amd length " + std::to_string(amd.values.size()));
  ec.amd = Tensor::from_values({static_cast<int64_t>(kAmdLen)}, amd.values, dt);
  ec.v_res = Tensor::from_values({4}, v_res, dt);
  return ec;
}

// ---- global conditioning ----

GlobalConditioner::GlobalConditioner(int64_t hidden, const CondConfig& cond_cfg,
                                     ParamStore& store)
    : hidden_(hidden),
      meta_dim_(cond_cfg.t5_dim + 4 + static_cast<int64_t>(kAmdLen)),
      store_(&store) {
  const DType dt = store.dtype();
  if (hidden % 2) throw ConfigError("GlobalConditioner: hidden size must be even");
  store.declare("meta.t1_w", {hidden, hidden}, dt);
  store.declare("meta.t1_b", {hidden}, dt);
  store.declare("meta.t2_w", {hidden, hidden}, dt);
  store.declare("meta.t2_b", {hidden}, dt);
  store.declare("meta.m1_w", {meta_dim_, 4 * hidden}, dt);
  store.declare("meta.m1_b", {4 * hidden}, dt);
  store.declare("meta.m2_w", {4 * hidden, hidden}, dt);
  store.declare("meta.m2_b", {hidden}, dt);
}

void GlobalConditioner::init_params(Rng& rng) {
  for (const char* n : {"meta.t1_w", "meta.t2_w", "meta.m1_w", "meta.m2_w"})
    fill_randn(store_->at(n), rng, 0.02);
}

Tensor GlobalConditioner::timestep_embedding(double t) const {
  const int64_t half = hidden_ / 2;
  std::vector<double> e(static_cast<size_t>(hidden_));
  for (int64_t i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[static_cast<size_t>(i)] = std::sin(t * freq);
    e[static_cast<size_t>(half + i)] = std::cos(t * freq);
  }
  Tensor sinus = Tensor::from_values({hidden_}, e, store_->dtype());
  const auto& s = *store_;
  Tensor h = silu(linear_vec(sinus, s.at("meta.t1_w"), s.at("meta.t1_b")));
  return linear_vec(h, s.at("meta.t2_w"), s.at("meta.t2_b"));
}

Tensor GlobalConditioner::c_global(double t, const EncodedCondition& ec) const {
  Tensor v_meta = concat({ec.y_pooled, ec.v_res, ec.amd}, 0);
  if (v_meta.numel() != meta_dim_)
    throw std::invalid_argument("c_global: v_meta length " + std::to_string(v_meta.numel()) +
                                " != " + std::to_string(meta_dim_));
  const auto& s = *store_;
  Tensor h = silu(linear_vec(v_meta, s.at("meta.m1_w"), s.at("meta.m1_b")));
  Tensor m = linear_vec(h, s.at("meta.m2_w"), s.at("meta.m2_b"));
  return add(timestep_embedding(t), m);
}

}  // namespace progdit
