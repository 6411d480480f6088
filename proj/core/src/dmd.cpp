#include "flowlab/dmd.hpp"

#include <cmath>
#include <fstream>

#include "flowlab/errors.hpp"

namespace flowlab {

AnalyticTeacher::AnalyticTeacher(GaussianMixture abs_mixture, GaussianMixture delta_mixture,
                                 double eps_t)
    : abs_(std::move(abs_mixture)), delta_(std::move(delta_mixture)), eps_t_(eps_t) {
  if (abs_.dim() != delta_.dim())
    throw ConfigError("analytic teacher: abs/delta mixture dimensions differ");
}

Mat AnalyticTeacher::velocity(const Mat& state, double t, const Mat& /*cond*/) const {
  const double tc = std::min(std::max(t, eps_t_), 1.0 - eps_t_);
  Mat out(state.rows(), state.cols());
  for (Eigen::Index r = 0; r < state.rows(); ++r) {
    const GaussianMixture& g = r == 0 ? abs_ : delta_;
    out.row(r) = marginal_velocity(g, state.row(r).transpose(), tc, eps_t_).transpose();
  }
  return out;
}

AnalyticTeacher AnalyticTeacher::from_spec_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open teacher spec: " + path.string());
  nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ConfigError("teacher spec is not valid JSON: " + path.string());
  if (!j.contains("abs")) throw ConfigError("teacher spec missing 'abs' mixture");
  GaussianMixture abs = GaussianMixture::from_json(j["abs"]);
  GaussianMixture delta =
      j.contains("delta") ? GaussianMixture::from_json(j["delta"]) : abs;
  return AnalyticTeacher(std::move(abs), std::move(delta), j.value("eps_t", 1e-3));
}

LearnedTeacher::LearnedTeacher(std::shared_ptr<const DdtModel> model) : model_(std::move(model)) {
  if (model_ == nullptr) throw ConfigError("learned teacher: null model");
}

Mat LearnedTeacher::velocity(const Mat& state, double t, const Mat& /*cond*/) const {
  const Mat no_cond(state.rows(), 0);
  return model_->velocity_value(HeadKind::kFm, state, t, no_cond);
}

std::unique_ptr<VelocityField> load_teacher(const std::filesystem::path& path) {
  // Sniff the container magic; anything else is treated as a mixture spec.
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open teacher: " + path.string());
  char magic[8] = {};
  is.read(magic, 8);
  is.close();
  if (std::string(magic, 8) == std::string(Container::kMagic, 8)) {
    Container c = Container::read(path);
    ModelConfig cfg = ModelConfig::from_json(c.meta.at("model/config"));
    auto model = std::make_shared<DdtModel>(cfg, 0);
    model->load_params(c, "model/");
    return std::make_unique<LearnedTeacher>(model);
  }
  return std::make_unique<AnalyticTeacher>(AnalyticTeacher::from_spec_file(path));
}

void RolloutBuffer::push(RolloutEntry e) {
  entries_.push_back(std::move(e));
  while (entries_.size() > capacity_) entries_.pop_front();
}

void RolloutBuffer::check_staleness(std::int64_t current_step, int max_staleness) const {
  for (const auto& e : entries_) {
    if (current_step - e.student_step > max_staleness)
      throw StalenessError("rollout from student step " + std::to_string(e.student_step) +
                           " consumed at step " + std::to_string(current_step) +
                           " exceeds staleness bound " + std::to_string(max_staleness));
  }
}

std::vector<double> default_schedule(int nfe) {
  if (nfe < 1) throw InputError("schedule: nfe >= 1 required");
  std::vector<double> s(static_cast<std::size_t>(nfe));
  for (int i = 0; i < nfe; ++i) s[static_cast<std::size_t>(i)] = 1.0 - static_cast<double>(i) / nfe;
  return s;
}

TracedRollout student_rollout_traced(ag::Tape& tape, DdtModel& model, const Mat& cond, int nfe,
                                     std::uint64_t seed, const std::vector<double>& schedule) {
  if (nfe < 1) throw InputError("student_rollout: nfe >= 1 required");
  const std::vector<double> sched = schedule.empty() ? default_schedule(nfe) : schedule;
  if (static_cast<int>(sched.size()) != nfe)
    throw ConfigError("student_rollout: schedule length must equal nfe");

  Rng rng(seed);
  const auto frames = cond.rows() > 0 ? cond.rows() : Eigen::Index(model.config().max_frames);
  const Mat z = rng.normal_matrix(frames, model.config().data_dim);

  ag::Tape::Id x = tape.constant(z);
  ag::Tape::Id x0 = x;
  int evals = 0;
  for (std::size_t i = 0; i < sched.size(); ++i) {
    const double t = sched[i];
    ag::Tape::Id v = model.forward_velocity(tape, HeadKind::kDm, x, t, cond);
    ++evals;
    x0 = tape.add(x, tape.scale(v, t));  // predict_clean on the tape
    if (!tape.val(x0).allFinite())
      throw NumericalError("student_rollout: non-finite prediction at step " + std::to_string(i) +
                           " (t=" + std::to_string(t) + ")");
    if (i + 1 < sched.size()) {
      const double tn = sched[i + 1];
      const Mat eps = rng.normal_matrix(frames, model.config().data_dim);
      x = tape.add(tape.scale(x0, 1.0 - tn), tape.constant(tn * eps));
    }
  }
  return TracedRollout{x0, evals};
}

RolloutResult student_rollout(const DdtModel& model, const Mat& cond, int nfe, std::uint64_t seed,
                              const std::vector<double>& schedule) {
  ag::Tape tape;
  auto& m = const_cast<DdtModel&>(model);
  TracedRollout tr = student_rollout_traced(tape, m, cond, nfe, seed, schedule);
  return RolloutResult{tape.val(tr.x0_node), tr.nfe_used};
}

Mat renoise(const Mat& x0, double t, std::uint64_t seed) {
  if (t < 0.0 || t > 1.0) throw InputError("renoise: t outside [0,1]");
  Rng rng(seed);
  const Mat eps = rng.normal_matrix(x0.rows(), x0.cols());
  return interpolate(x0, eps, t);
}

double lambda_weight(double t, const Mat& student_window, const Mat& teacher_denoised,
                     const LambdaConfig& cfg) {
  if (cfg.scheme == "constant") return cfg.c0;
  if (cfg.scheme != "inverse_deviation")
    throw ConfigError("lambda_weight: unknown scheme '" + cfg.scheme + "'");
  (void)t;
  const double dev = (student_window - teacher_denoised).cwiseAbs().mean();
  return cfg.c0 / std::max(dev, cfg.floor);
}

FakeUpdateStats fake_update(DdtModel& fake, Adam& fake_opt, const RolloutBuffer& buffer,
                            int k_steps, int batch_windows, int window_length,
                            const TimestepSampler& ts, Rng& rng, bool use_boundary_fix) {
  if (k_steps == 0) return FakeUpdateStats{0.0, 0};
  if (buffer.empty()) throw InputError("fake_update: empty rollout buffer");

  FakeUpdateStats stats;
  ModelTapeField field(fake, HeadKind::kFm);
  for (int s = 0; s < k_steps; ++s) {
    std::vector<Mat> windows;
    windows.reserve(static_cast<std::size_t>(batch_windows));
    for (int b = 0; b < batch_windows; ++b) {
      const auto& entry =
          buffer.entries()[rng.uniform_index(buffer.entries().size())];
      const auto specs = enumerate_windows(entry.seq.length(), window_length, window_length);
      const WindowSpec w = specs[rng.uniform_index(specs.size())];
      if (use_boundary_fix) {
        windows.push_back(boundary_fix(entry.seq, w).latents);
      } else {
        windows.push_back(crop(entry.seq.latents, w));
      }
    }
    std::vector<FmItem> batch;
    batch.reserve(windows.size());
    for (const Mat& w : windows) batch.push_back(FmItem{&w, nullptr});
    fake.registry().zero_grads();
    stats.mean_loss += fm_loss_backward(field, batch, ts, rng);
    fake_opt.step();
    ++stats.steps;
  }
  stats.mean_loss /= static_cast<double>(stats.steps);
  return stats;
}

WindowCoupling dmd_window_coupling(ag::Tape& tape, ag::Tape::Id window_node,
                                   const std::vector<bool>& loss_mask,
                                   const VelocityField& teacher, const VelocityField& fake,
                                   double t, const Mat& cond, const LambdaConfig& lambda_cfg,
                                   std::uint64_t noise_seed) {
  const Mat win = tape.val(window_node);
  if (loss_mask.size() != static_cast<std::size_t>(win.rows()))
    throw InputError("dmd surrogate: loss mask length mismatch");

  // Everything in this block is stop-gradient: fresh noise, both velocity
  // queries, the weighting. Only the coupling with the clean window below is
  // differentiated.
  const Mat x_t = renoise(win, t, noise_seed);
  const Mat v_fake = fake.velocity(x_t, t, cond);
  const Mat u_teacher = teacher.velocity(x_t, t, cond);
  if (v_fake.rows() != win.rows() || u_teacher.rows() != win.rows())
    throw ConfigError("dmd surrogate: teacher/fake output length does not match the window");
  const Mat denoised = predict_clean(x_t, t, u_teacher);
  const double lambda = lambda_weight(t, win, denoised, lambda_cfg);

  Mat g = lambda * (v_fake - u_teacher);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    if (!loss_mask[static_cast<std::size_t>(r)]) g.row(r).setZero();

  const ag::Tape::Id coupling = tape.dot_const(window_node, g);
  return WindowCoupling{coupling, tape.val(coupling)(0, 0), lambda};
}

SurrogateResult dmd_surrogate_window(ag::Tape& tape, ag::Tape::Id window_node,
                                     const std::vector<bool>& loss_mask,
                                     const VelocityField& teacher, const VelocityField& fake,
                                     double t, const Mat& cond, const LambdaConfig& lambda_cfg,
                                     std::uint64_t noise_seed, ag::GradSink* sink) {
  const WindowCoupling wc = dmd_window_coupling(tape, window_node, loss_mask, teacher, fake, t,
                                                cond, lambda_cfg, noise_seed);
  tape.backward(wc.node, sink);
  return SurrogateResult{wc.value, wc.lambda};
}

DmdStats dmd_gradient(DdtModel& student, const std::vector<RolloutEntry*>& rollouts,
                      const VelocityField& teacher, const VelocityField& fake,
                      const DmdConfig& cfg, Rng& rng, double scale) {
  if (rollouts.empty()) throw InputError("dmd_gradient: no rollouts");
  const int stride = cfg.stride > 0 ? cfg.stride : cfg.window_length;
  const TimestepSampler ts(cfg.t_sampler);

  struct WinDraw {
    double t;
    int window_index;
    std::uint64_t noise_seed;
  };
  // All randomness drawn up front, entry-major, so the parallel section is
  // deterministic regardless of thread count.
  std::vector<std::vector<WinDraw>> draws(rollouts.size());
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    const auto specs =
        enumerate_windows(static_cast<int>(rollouts[r]->cond.rows()), cfg.window_length, stride);
    for (int wi = 0; wi < cfg.windows_per_rollout; ++wi)
      draws[r].push_back(
          {ts.draw(rng), static_cast<int>(rng.uniform_index(specs.size())), rng.raw()});
  }

  ag::ParamRegistry& reg = student.registry();
  std::vector<ag::GradSink> sinks(rollouts.size(), ag::GradSink(reg.size()));
  std::vector<double> couplings(rollouts.size(), 0.0);
  std::vector<double> lambdas(rollouts.size(), 0.0);

#pragma omp parallel for schedule(static)
  for (std::int64_t ri = 0; ri < static_cast<std::int64_t>(rollouts.size()); ++ri) {
    const auto r = static_cast<std::size_t>(ri);
    RolloutEntry& entry = *rollouts[r];
    ag::Tape tape;
    // On-policy: the rollout runs under the current parameters; its values
    // are kept on the entry for the fake estimator's updates.
    TracedRollout tr =
        student_rollout_traced(tape, student, entry.cond, cfg.nfe, entry.seed, cfg.schedule);
    entry.seq.latents = tape.val(tr.x0_node);
    entry.seq.kinds.assign(static_cast<std::size_t>(entry.seq.latents.rows()), LatentKind::kDelta);
    entry.seq.kinds[0] = LatentKind::kAbsolute;

    const auto specs =
        enumerate_windows(static_cast<int>(entry.cond.rows()), cfg.window_length, stride);
    ag::Tape::Id total = -1;
    for (const WinDraw& d : draws[r]) {
      const WindowSpec w = specs[static_cast<std::size_t>(d.window_index)];
      ag::Tape::Id win_node;
      std::vector<bool> mask;
      if (cfg.use_boundary_fix && w.start > 0) {
        const FixedWindow fixed = boundary_fix(entry.seq, w);
        // The prepended latent is a decoded value, masked from the loss; it
        // enters the tape as a constant row glued above the live crop.
        const ag::Tape::Id prefix_row = tape.constant(fixed.latents.topRows(1));
        const ag::Tape::Id body = tape.slice_rows(tr.x0_node, w.start, w.length);
        win_node = tape.vconcat(prefix_row, body);
        mask.assign(fixed.loss_mask.begin(), fixed.loss_mask.end());
      } else {
        win_node = tape.slice_rows(tr.x0_node, w.start, w.length);
        mask.assign(static_cast<std::size_t>(w.length), true);
      }
      const Mat cond_crop(tape.val(win_node).rows(), 0);
      const WindowCoupling wc = dmd_window_coupling(tape, win_node, mask, teacher, fake, d.t,
                                                    cond_crop, cfg.lambda, d.noise_seed);
      couplings[r] += wc.value;
      lambdas[r] += wc.lambda;
      total = total < 0 ? wc.node : tape.add(total, wc.node);
    }
    tape.backward(total, &sinks[r]);
  }

  DmdStats stats;
  for (std::size_t r = 0; r < rollouts.size(); ++r) {
    reg.apply(sinks[r], scale);
    stats.surrogate += couplings[r];
    stats.mean_lambda += lambdas[r];
  }
  stats.windows = static_cast<int>(rollouts.size()) * cfg.windows_per_rollout;
  stats.surrogate /= stats.windows;
  stats.mean_lambda /= stats.windows;
  return stats;
}

}  // namespace flowlab
