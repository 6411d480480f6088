#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowlab/autodiff.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

using Vec = Eigen::VectorXd;

// Mixture of diagonal-covariance Gaussians. Weights live on the simplex,
// variances are floored at kVarianceFloor to keep conditioning well-posed.
struct GaussianMixture {
  static constexpr double kVarianceFloor = 1e-6;

  Vec weights;    // M
  Mat means;      // M x D
  Mat variances;  // M x D, per-dimension diagonal entries

  GaussianMixture() = default;
  GaussianMixture(Vec w, Mat mu, Mat var);

  int n_components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }

  double log_density(const Vec& x) const;
  Vec sample(Rng& rng) const;
  int sample_component(Rng& rng) const;

  nlohmann::json to_json() const;
  static GaussianMixture from_json(const nlohmann::json& j);

  // Convenience: single isotropic component.
  static GaussianMixture single(const Vec& mean, double sigma);
};

// Pushforward of a mixture under x_t = (1-t) x0 + t z with z ~ N(0, I):
// component i keeps weight w_i, mean (1-t) mu_i, variance (1-t)^2 s_i^2 + t^2.
struct NoisedMixtureView {
  GaussianMixture base;
  double t;
  GaussianMixture mixture() const;
};

NoisedMixtureView noised_mixture(const GaussianMixture& gmm, double t);

// Exact marginal velocity E[x0 - z | x_t = x] by per-component Gaussian
// conditioning. Guarded away from the t -> 0 singularity.
Vec marginal_velocity(const GaussianMixture& gmm, const Vec& x, double t, double eps_t = 1e-3);

// Posterior mean E[x0 | x_t = x] under the linear path (same conditioning).
Vec posterior_mean_x0(const GaussianMixture& gmm, const Vec& x, double t);

struct McVelocityEstimate {
  Vec velocity;
  double ess;
  double bandwidth;
};

// Brute-force oracle for marginal_velocity: kernel-smoothed self-normalized
// importance estimate over n fresh (x0, z) pairs. bandwidth <= 0 selects the
// default 0.05 * sqrt(t).
McVelocityEstimate mc_velocity(const GaussianMixture& gmm, const Vec& x, double t, int n,
                               double bandwidth, std::uint64_t seed);

// Energy distance 2 E||A-B|| - E||A-A'|| - E||B-B'|| between two sample sets
// (rows are samples). V-statistic form: identical sets give exactly 0.
double energy_distance(const Mat& a, const Mat& b);

using LogDensityFn = std::function<double(const Vec&)>;

// Monte-Carlo reverse KL E_q[log q - log p] from student samples. Requires an
// analytic student log-density unless the (biased) KDE fallback is requested.
double reverse_kl_mc(const std::vector<Vec>& student_samples,
                     const std::optional<LogDensityFn>& student_log_density,
                     const GaussianMixture& teacher, bool allow_kde = false);

}  // namespace flowlab
