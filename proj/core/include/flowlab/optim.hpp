#pragma once

#include <nlohmann/json.hpp>

#include "flowlab/autodiff.hpp"
#include "flowlab/container.hpp"

namespace flowlab {

struct OptimConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global-norm clip over the whole registry; <= 0 disables
  double weight_decay = 0.0;

  nlohmann::json to_json() const;
  static OptimConfig from_json(const nlohmann::json& j);
};

// Adam over one parameter registry. step() consumes the gradients accumulated
// in Parameter::grad (after optional global-norm clipping) and leaves them
// untouched; callers zero grads when starting the next accumulation.
class Adam {
 public:
  Adam(OptimConfig cfg, ag::ParamRegistry& registry);

  // Returns the pre-clip global gradient norm (over active parameters).
  // `active` (when given, indexed like the registry) freezes masked-out
  // parameters: no moment update, no value change.
  double step(const std::vector<bool>* active = nullptr);

  std::int64_t steps_taken() const { return t_; }

  void save(Container& c, const std::string& prefix) const;
  void load(const Container& c, const std::string& prefix);

 private:
  OptimConfig cfg_;
  ag::ParamRegistry* reg_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  std::int64_t t_ = 0;
};

}  // namespace flowlab
