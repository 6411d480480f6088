#include "flowlab/mixture.hpp"

#include <cmath>
#include <limits>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;

double logsumexp(const Vec& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}
}  // namespace

GaussianMixture::GaussianMixture(Vec w, Mat mu, Mat var)
    : weights(std::move(w)), means(std::move(mu)), variances(std::move(var)) {
  const auto m = weights.size();
  if (m == 0) throw InputError("GaussianMixture: no components");
  if (means.rows() != m || variances.rows() != m || means.cols() != variances.cols())
    throw InputError("GaussianMixture: inconsistent component shapes");
  if ((weights.array() < 0.0).any()) throw InputError("GaussianMixture: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-12)
    throw InputError("GaussianMixture: weights must sum to 1 within 1e-12");
  if ((variances.array() <= 0.0).any())
    throw InputError("GaussianMixture: variances must be strictly positive");
  variances = variances.cwiseMax(kVarianceFloor);
}

double GaussianMixture::log_density(const Vec& x) const {
  const int m = n_components();
  Vec logp(m);
  for (int i = 0; i < m; ++i) {
    double acc = std::log(weights(i));
    for (int d = 0; d < dim(); ++d) {
      const double var = variances(i, d);
      const double r = x(d) - means(i, d);
      acc += -0.5 * (kLog2Pi + std::log(var) + r * r / var);
    }
    logp(i) = acc;
  }
  return logsumexp(logp);
}

int GaussianMixture::sample_component(Rng& rng) const {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int i = 0; i < n_components(); ++i) {
    acc += weights(i);
    if (u < acc) return i;
  }
  return n_components() - 1;
}

Vec GaussianMixture::sample(Rng& rng) const {
  const int i = sample_component(rng);
  Vec x(dim());
  for (int d = 0; d < dim(); ++d)
    x(d) = means(i, d) + std::sqrt(variances(i, d)) * rng.normal();
  return x;
}

nlohmann::json GaussianMixture::to_json() const {
  nlohmann::json j;
  j["weights"] = std::vector<double>(weights.data(), weights.data() + weights.size());
  auto mat_rows = [](const Mat& m) {
    std::vector<std::vector<double>> rows;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
      rows.push_back(std::move(row));
    }
    return rows;
  };
  j["means"] = mat_rows(means);
  j["variances"] = mat_rows(variances);
  return j;
}

GaussianMixture GaussianMixture::from_json(const nlohmann::json& j) {
  const auto w = j.at("weights").get<std::vector<double>>();
  const auto mu = j.at("means").get<std::vector<std::vector<double>>>();
  const auto var = j.at("variances").get<std::vector<std::vector<double>>>();
  const int m = static_cast<int>(w.size());
  if (mu.empty() || mu.size() != w.size() || var.size() != w.size())
    throw ConfigError("mixture spec: weights/means/variances lengths differ");
  const int d = static_cast<int>(mu[0].size());
  Vec wv(m);
  Mat muM(m, d), varM(m, d);
  for (int i = 0; i < m; ++i) {
    wv(i) = w[static_cast<std::size_t>(i)];
    if (static_cast<int>(mu[i].size()) != d || static_cast<int>(var[i].size()) != d)
      throw ConfigError("mixture spec: ragged rows");
    for (int k = 0; k < d; ++k) {
      muM(i, k) = mu[i][static_cast<std::size_t>(k)];
      varM(i, k) = var[i][static_cast<std::size_t>(k)];
    }
  }
  return GaussianMixture(wv, muM, varM);
}

GaussianMixture GaussianMixture::single(const Vec& mean, double sigma) {
  Vec w(1);
  w(0) = 1.0;
  Mat mu(1, mean.size());
  mu.row(0) = mean.transpose();
  Mat var = Mat::Constant(1, mean.size(), sigma * sigma);
  return GaussianMixture(w, mu, var);
}

GaussianMixture NoisedMixtureView::mixture() const {
  const double a = 1.0 - t;
  Mat mu = a * base.means;
  Mat var = (a * a) * base.variances;
  var.array() += t * t;
  if (t >= 1.0)
    return GaussianMixture(base.weights, Mat::Zero(base.means.rows(), base.means.cols()),
                           Mat::Ones(base.means.rows(), base.means.cols()));
  return GaussianMixture(base.weights, std::move(mu), var.cwiseMax(GaussianMixture::kVarianceFloor));
}

NoisedMixtureView noised_mixture(const GaussianMixture& gmm, double t) {
  if (t < 0.0 || t > 1.0) throw InputError("noised_mixture: t outside [0,1]");
  return NoisedMixtureView{gmm, t};
}

Vec marginal_velocity(const GaussianMixture& gmm, const Vec& x, double t, double eps_t) {
  if (t < eps_t || t > 1.0 - eps_t)
    throw InputError("marginal_velocity: t outside singularity guard [" + std::to_string(eps_t) +
                     ", " + std::to_string(1.0 - eps_t) + "]");
  if (x.size() != gmm.dim()) throw InputError("marginal_velocity: x dimension mismatch");
  const double a = 1.0 - t;
  const int m = gmm.n_components();
  const int d = gmm.dim();

  Vec logr(m);
  for (int i = 0; i < m; ++i) {
    double acc = std::log(gmm.weights(i));
    for (int k = 0; k < d; ++k) {
      const double s2 = a * a * gmm.variances(i, k) + t * t;
      const double r = x(k) - a * gmm.means(i, k);
      acc += -0.5 * (kLog2Pi + std::log(s2) + r * r / s2);
    }
    logr(i) = acc;
  }
  const double lse = logsumexp(logr);

  Vec u = Vec::Zero(d);
  for (int i = 0; i < m; ++i) {
    const double resp = std::exp(logr(i) - lse);
    for (int k = 0; k < d; ++k) {
      const double var = gmm.variances(i, k);
      const double s2 = a * a * var + t * t;
      // E[x0 | x_t, i] - E[z | x_t, i], both from Gaussian conditioning.
      const double ui = gmm.means(i, k) + (a * var - t) / s2 * (x(k) - a * gmm.means(i, k));
      u(k) += resp * ui;
    }
  }
  return u;
}

Vec posterior_mean_x0(const GaussianMixture& gmm, const Vec& x, double t) {
  if (t < 0.0 || t > 1.0) throw InputError("posterior_mean_x0: t outside [0,1]");
  if (x.size() != gmm.dim()) throw InputError("posterior_mean_x0: x dimension mismatch");
  const double a = 1.0 - t;
  const int m = gmm.n_components();
  const int d = gmm.dim();
  Vec logr(m);
  for (int i = 0; i < m; ++i) {
    double acc = std::log(gmm.weights(i));
    for (int k = 0; k < d; ++k) {
      const double s2 = std::max(a * a * gmm.variances(i, k) + t * t, 1e-12);
      const double r = x(k) - a * gmm.means(i, k);
      acc += -0.5 * (kLog2Pi + std::log(s2) + r * r / s2);
    }
    logr(i) = acc;
  }
  const double lse = logsumexp(logr);
  Vec mean = Vec::Zero(d);
  for (int i = 0; i < m; ++i) {
    const double resp = std::exp(logr(i) - lse);
    for (int k = 0; k < d; ++k) {
      const double var = gmm.variances(i, k);
      const double s2 = std::max(a * a * var + t * t, 1e-12);
      mean(k) += resp * (gmm.means(i, k) + a * var / s2 * (x(k) - a * gmm.means(i, k)));
    }
  }
  return mean;
}

McVelocityEstimate mc_velocity(const GaussianMixture& gmm, const Vec& x, double t, int n,
                               double bandwidth, std::uint64_t seed) {
  if (n < 1000) throw InputError("mc_velocity: need n >= 1000");
  if (x.size() != gmm.dim()) throw InputError("mc_velocity: x dimension mismatch");
  const double bw = bandwidth > 0.0 ? bandwidth : 0.05 * std::sqrt(t);
  const int d = gmm.dim();

  Rng rng(seed);
  // Streaming self-normalized estimate with an explicit max-shift pass is not
  // possible one-shot; use log-weight shift by running max with rescaling.
  double max_logw = -std::numeric_limits<double>::infinity();
  double sum_w = 0.0, sum_w2 = 0.0;
  Vec acc = Vec::Zero(d);
  Vec x0(d), z(d), xt(d);
  for (int i = 0; i < n; ++i) {
    const int comp = gmm.sample_component(rng);
    for (int k = 0; k < d; ++k)
      x0(k) = gmm.means(comp, k) + std::sqrt(gmm.variances(comp, k)) * rng.normal();
    for (int k = 0; k < d; ++k) z(k) = rng.normal();
    xt = (1.0 - t) * x0 + t * z;
    const double logw = -0.5 * (xt - x).squaredNorm() / (bw * bw);
    if (logw > max_logw) {
      if (std::isfinite(max_logw)) {
        const double rescale = std::exp(max_logw - logw);
        sum_w *= rescale;
        sum_w2 *= rescale * rescale;
        acc *= rescale;
      }
      max_logw = logw;
    }
    const double w = std::exp(logw - max_logw);
    sum_w += w;
    sum_w2 += w * w;
    acc += w * (x0 - z);
  }
  const double ess = sum_w2 > 0.0 ? sum_w * sum_w / sum_w2 : 0.0;
  if (ess < 50.0)
    throw UnreliableEstimateError(
        "mc_velocity: effective sample size " + std::to_string(ess) + " < 50", ess);
  return McVelocityEstimate{acc / sum_w, ess, bw};
}

double energy_distance(const Mat& a, const Mat& b) {
  if (a.rows() == 0 || b.rows() == 0) throw InputError("energy_distance: empty sample set");
  if (a.cols() != b.cols()) throw InputError("energy_distance: dimension mismatch");
  const auto na = a.rows();
  const auto nb = b.rows();

  auto mean_cross = [](const Mat& p, const Mat& q) {
    std::vector<double> row_sums(static_cast<std::size_t>(p.rows()), 0.0);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(p.rows()); ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < q.rows(); ++j) s += (p.row(i) - q.row(j)).norm();
      row_sums[static_cast<std::size_t>(i)] = s;
    }
    double total = 0.0;
    for (double s : row_sums) total += s;
    return total / (static_cast<double>(p.rows()) * static_cast<double>(q.rows()));
  };

  return 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
}

double reverse_kl_mc(const std::vector<Vec>& student_samples,
                     const std::optional<LogDensityFn>& student_log_density,
                     const GaussianMixture& teacher, bool allow_kde) {
  if (student_samples.empty()) throw InputError("reverse_kl_mc: no samples");
  LogDensityFn logq;
  if (student_log_density.has_value()) {
    logq = *student_log_density;
  } else if (allow_kde) {
    // Silverman-rule Gaussian KDE; biased, opt-in only.
    const auto n = student_samples.size();
    const int d = static_cast<int>(student_samples[0].size());
    Vec mean = Vec::Zero(d);
    for (const Vec& s : student_samples) mean += s;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const Vec& s : student_samples) var += (s - mean).squaredNorm();
    var /= static_cast<double>(n) * d;
    const double h =
        std::sqrt(var) * std::pow(4.0 / ((d + 2.0) * static_cast<double>(n)), 1.0 / (d + 4.0));
    auto samples = student_samples;
    logq = [samples, h, d](const Vec& x) {
      Vec lw(samples.size());
      for (std::size_t i = 0; i < samples.size(); ++i)
        lw(static_cast<Eigen::Index>(i)) = -0.5 * (x - samples[i]).squaredNorm() / (h * h);
      const double m = lw.maxCoeff();
      const double lse = m + std::log((lw.array() - m).exp().sum());
      return lse - std::log(static_cast<double>(samples.size())) -
             0.5 * d * (kLog2Pi + 2.0 * std::log(h));
    };
  } else {
    throw CapabilityError(
        "reverse_kl_mc: student log-density unavailable; pass allow_kde=true for the biased KDE "
        "estimate or use energy_distance for learned generators");
  }

  double acc = 0.0;
  for (const Vec& s : student_samples) acc += logq(s) - teacher.log_density(s);
  return acc / static_cast<double>(student_samples.size());
}

}  // namespace flowlab
