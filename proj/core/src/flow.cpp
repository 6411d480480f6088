#include "flowlab/flow.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {
void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}
}  // namespace

NoisingPath::NoisingPath(double t_) : t(t_), alpha(1.0 - t_) {
  if (t < 0.0 || t > 1.0) throw InputError("NoisingPath: t outside [0,1]");
}

Mat interpolate(const Mat& x0, const Mat& z, double t) {
  require_same_shape(x0, z, "interpolate");
  if (t < 0.0 || t > 1.0) throw InputError("interpolate: t outside [0,1]");
  return (1.0 - t) * x0 + t * z;
}

Mat conditional_velocity(const Mat& x0, const Mat& z) {
  require_same_shape(x0, z, "conditional_velocity");
  return x0 - z;
}

Mat predict_clean(const Mat& x_t, double t, const Mat& v) {
  require_same_shape(x_t, v, "predict_clean");
  if (t < 0.0 || t > 1.0) throw InputError("predict_clean: t outside [0,1]");
  return x_t + t * v;
}

Mat euler_sample(const VelocityField& field, const Mat& z, int n_steps, const Mat& cond) {
  if (n_steps < 1) throw InputError("euler_sample: n_steps must be >= 1");
  const double dt = 1.0 / n_steps;
  Mat x = z;
  for (int i = 0; i < n_steps; ++i) {
    const double t = 1.0 - i * dt;
    Mat v = field.velocity(x, t, cond);
    if (!v.allFinite())
      throw NumericalError("euler_sample: non-finite field output at step " + std::to_string(i) +
                           " (t=" + std::to_string(t) + ")");
    x += dt * v;
  }
  return x;
}

TimestepSampler::TimestepSampler(TimestepConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.family != "uniform" && cfg_.family != "fixed")
    throw ConfigError("timestep sampler: unknown family '" + cfg_.family + "'");
  if (cfg_.family == "uniform" && !(cfg_.lo < cfg_.hi))
    throw ConfigError("timestep sampler: need lo < hi");
}

double TimestepSampler::draw(Rng& rng) const {
  if (cfg_.family == "fixed") return cfg_.value;
  return rng.uniform(cfg_.lo, cfg_.hi);
}

double fm_loss_value(const VelocityField& field, const std::vector<FmItem>& batch,
                     const TimestepSampler& ts, Rng& rng) {
  if (batch.empty()) throw InputError("fm_loss: empty batch");
  double total = 0.0;
  const Mat empty_cond(0, 0);
  const std::uint64_t base = rng.raw();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Mat& x0 = *batch[i].x0;
    Rng item_rng(mix_seed(base, i));
    const double t = ts.draw(item_rng);
    const Mat z = item_rng.normal_matrix(x0.rows(), x0.cols());
    const Mat x_t = interpolate(x0, z, t);
    const Mat target = conditional_velocity(x0, z);
    const Mat v = field.velocity(x_t, t, batch[i].cond ? *batch[i].cond : empty_cond);
    total += (v - target).squaredNorm();
  }
  return total / static_cast<double>(batch.size());
}

double fm_loss_backward(TapeVelocityField& field, const std::vector<FmItem>& batch,
                        const TimestepSampler& ts, Rng& rng) {
  if (batch.empty()) throw InputError("fm_loss: empty batch");
  const std::size_t n = batch.size();
  // Per-item child streams, drawn up front; the parallel section below is
  // free of shared state and matches fm_loss_value's draws exactly.
  const std::uint64_t base = rng.raw();
  std::vector<double> t_draws(n);
  std::vector<Mat> z_draws(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng item_rng(mix_seed(base, i));
    t_draws[i] = ts.draw(item_rng);
    z_draws[i] = item_rng.normal_matrix(batch[i].x0->rows(), batch[i].x0->cols());
  }

  ag::ParamRegistry& reg = field.registry();
  std::vector<ag::GradSink> sinks(n, ag::GradSink(reg.size()));
  std::vector<double> losses(n, 0.0);
  const Mat empty_cond(0, 0);

#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const Mat& x0 = *batch[i].x0;
    const Mat x_t = interpolate(x0, z_draws[i], t_draws[i]);
    const Mat target = conditional_velocity(x0, z_draws[i]);
    ag::Tape tape;
    const auto v = field.velocity(tape, x_t, t_draws[i], batch[i].cond ? *batch[i].cond : empty_cond);
    const auto err = tape.add_const(v, -target);
    const auto loss = tape.sum_sq(err);
    losses[i] = tape.val(loss)(0, 0);
    tape.backward(loss, &sinks[i]);
  }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += losses[i];
    reg.apply(sinks[i], 1.0 / static_cast<double>(n));
  }
  return total / static_cast<double>(n);
}

}  // namespace flowlab
