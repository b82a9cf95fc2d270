#pragma once

#include <memory>
#include <string>

#include "progdit/backbone.hpp"
#include "progdit/conditioning.hpp"
#include "progdit/params.hpp"
#include "progdit/schedule.hpp"

namespace progdit {

// the full trainable assembly: dual toy text encoders + fusion, metadata
// conditioning, and the DiT backbone, sharing one parameter store
class GenerativeModel {
 public:
  GenerativeModel(const ModelConfig& cfg, DType dt);
  void init_params(uint64_t seed);

  EncodedCondition encode_condition(const std::string& prompt_text, const AuxMetadata& amd,
                                    const std::vector<double>& v_res) const;
  EncodedCondition encode_unconditional() const;

  // v-prediction at (z_t, t) under the encoded condition
  Tensor velocity(const Tensor& z_t, double t, const EncodedCondition& ec) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const ConditioningEncoder& conditioner() const { return *cond_; }
  const DiffusionBackbone& backbone() const { return *net_; }
  std::vector<double> default_v_res() const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::unique_ptr<ConditioningEncoder> cond_;
  std::unique_ptr<GlobalConditioner> gcond_;
  std::unique_ptr<DiffusionBackbone> net_;
};

}  // namespace progdit
