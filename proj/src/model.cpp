#include "progdit/model.hpp"

namespace progdit {

GenerativeModel::GenerativeModel(const ModelConfig& cfg, DType dt) : cfg_(cfg) {
  cfg_.validate();
  store_.set_dtype(dt);
  cond_ = std::make_unique<ConditioningEncoder>(cfg_.cond, store_);
  gcond_ = std::make_unique<GlobalConditioner>(cfg_.hidden, cfg_.cond, store_);
  net_ = std::make_unique<DiffusionBackbone>(cfg_, store_);
}

void GenerativeModel::init_params(uint64_t seed) {
  Rng rng(seed);
  cond_->init_params(rng);
  gcond_->init_params(rng);
  net_->init_params(rng);
}

EncodedCondition GenerativeModel::encode_condition(const std::string& prompt_text,
                                                   const AuxMetadata& amd,
                                                   const std::vector<double>& v_res) const {
  return cond_->encode(cond_->tokenize_prompt(prompt_text), amd, v_res);
}

EncodedCondition GenerativeModel::encode_unconditional() const {
  return encode_condition("", neutral_amd(), {0.5, 0.5, 0.5, 0.5});
}

Tensor GenerativeModel::velocity(const Tensor& z_t, double t,
                                 const EncodedCondition& ec) const {
  return net_->forward(z_t, gcond_->c_global(t, ec), ec);
}

std::vector<double> GenerativeModel::default_v_res() const {
  const double side = static_cast<double>(cfg_.latent_h * 8);
  return make_v_res(static_cast<int64_t>(side), static_cast<int64_t>(side),
                    static_cast<int64_t>(side), static_cast<int64_t>(side),
                    cfg_.cond.res_norm_max);
}

}  // namespace progdit
