#pragma once

#include <functional>
#include <string>
#include <vector>

#include "flowlab/autodiff.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

// Linear noising path x_t = (1-t) x0 + t z. alpha = 1 - t always.
struct NoisingPath {
  double t;
  double alpha;
  explicit NoisingPath(double t_);
};

// Velocity field without gradients; samplers, teachers and oracles use this.
// `cond` is a per-frame condition matrix (T x C, possibly 0 columns).
struct VelocityField {
  virtual ~VelocityField() = default;
  virtual Mat velocity(const Mat& state, double t, const Mat& cond) const = 0;
};

// Velocity field that builds its prediction on a caller-owned tape, so losses
// can backpropagate into the field's parameters.
struct TapeVelocityField {
  virtual ~TapeVelocityField() = default;
  virtual ag::Tape::Id velocity(ag::Tape& tape, const Mat& state, double t,
                                const Mat& cond) = 0;
  virtual ag::ParamRegistry& registry() = 0;
};

Mat interpolate(const Mat& x0, const Mat& z, double t);
Mat conditional_velocity(const Mat& x0, const Mat& z);
Mat predict_clean(const Mat& x_t, double t, const Mat& v);

// Integrates dx/dt = -field from t=1 to t=0 with `n_steps` uniform explicit
// Euler steps starting from z.
Mat euler_sample(const VelocityField& field, const Mat& z, int n_steps, const Mat& cond);

struct TimestepConfig {
  std::string family = "uniform";
  double lo = 1e-3;        // uniform support [lo, hi]
  double hi = 1.0 - 1e-3;
  double value = 0.5;      // for family == "fixed"
};

class TimestepSampler {
 public:
  explicit TimestepSampler(TimestepConfig cfg);
  double draw(Rng& rng) const;
  const TimestepConfig& config() const { return cfg_; }

 private:
  TimestepConfig cfg_;
};

struct FmItem {
  const Mat* x0;
  const Mat* cond;  // nullptr for unconditional fields
};

// Monte-Carlo flow-matching loss: per item one t and one fresh z are drawn,
// the squared norm ||v(x_t,t,c) - (x0 - z)||^2 summed over entries, then the
// batch mean. Draw order per item: t first, then z.
double fm_loss_value(const VelocityField& field, const std::vector<FmItem>& batch,
                     const TimestepSampler& ts, Rng& rng);

// Differentiable variant; parameter gradients (scaled by 1/batch) accumulate
// through the field's sink. Uses the identical draw order as fm_loss_value.
double fm_loss_backward(TapeVelocityField& field, const std::vector<FmItem>& batch,
                        const TimestepSampler& ts, Rng& rng);

}  // namespace flowlab
