#include "flowlab/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "flowlab/dmd.hpp"
#include "flowlab/errors.hpp"
#include "flowlab/flow.hpp"

namespace flowlab {

GradCheckConfig GradCheckConfig::tiny() {
  GradCheckConfig c;
  c.model.encoder = BlockConfig{2, 16, 2, 4};
  c.model.head = BlockConfig{1, 16, 2, 2};
  c.model.data_dim = 2;
  c.model.cond_dim = 4;
  c.model.max_frames = 64;
  c.frames = 8;
  c.window = 4;
  return c;
}

bool GradCheckReport::pass() const {
  if (!routing_ok) return false;
  for (const auto& g : fm_path)
    if (!(g.max_rel_err < tol)) return false;
  for (const auto& g : dmd_path)
    if (!(g.max_rel_err < tol)) return false;
  return true;
}

std::string GradCheckReport::to_text() const {
  std::ostringstream os;
  os << "gradient check (central differences, tol " << tol << ")\n";
  auto dump = [&os](const char* path, const std::vector<GradGroupReport>& groups) {
    for (const auto& g : groups) {
      os << "  " << path << " " << g.group << ": max rel err " << g.max_rel_err << " over "
         << g.values_checked << " of " << g.param_values << " values\n";
    }
  };
  dump("fm ", fm_path);
  dump("dmd", dmd_path);
  os << "  routing: " << (routing_ok ? "exact zeros hold" : ("VIOLATED - " + failure)) << "\n";
  return os.str();
}

namespace {

struct Fixture {
  Mat x0;
  Mat cond;
  Mat x_t;       // for the surrogate path
  double t_fm = 0.6;
  double t_dmd = 0.55;
  std::uint64_t fm_probe_seed = 42;
};

double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

// Walks every value of every parameter with central differences.
GradGroupReport check_group(ParamGroup& group, const std::vector<Mat>& analytic,
                            const std::function<double()>& eval, double h) {
  GradGroupReport rep;
  rep.group = group.name;
  rep.param_values = group.count_values();
  for (std::size_t pi = 0; pi < group.params.size(); ++pi) {
    ag::Parameter& p = *group.params[pi];
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double orig = p.value.data()[i];
      const double step = h * std::max(1.0, std::abs(orig));
      p.value.data()[i] = orig + step;
      const double fp = eval();
      p.value.data()[i] = orig - step;
      const double fm = eval();
      p.value.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = analytic[pi].data()[i];
      rep.max_rel_err = std::max(rep.max_rel_err, rel_err(fd, an));
      ++rep.values_checked;
    }
  }
  return rep;
}

std::vector<Mat> grab_grads(const ParamGroup& group) {
  std::vector<Mat> out;
  for (const auto& p : group.params) out.push_back(p->grad);
  return out;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckConfig& cfg) {
  GradCheckReport report;
  report.tol = cfg.tol;

  DdtModel model(cfg.model, mix_seed(cfg.seed, 1));
  Fixture fx;
  Rng rng(mix_seed(cfg.seed, 2));
  fx.x0 = rng.normal_matrix(cfg.frames, cfg.model.data_dim);
  fx.cond = Mat::Zero(cfg.frames, cfg.model.cond_dim);
  if (cfg.model.cond_dim > 0)
    for (int f = 0; f < cfg.frames; ++f)
      fx.cond(f, static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(cfg.model.cond_dim)))) = 1.0;
  fx.x_t = interpolate(fx.x0, rng.normal_matrix(cfg.frames, cfg.model.data_dim), fx.t_dmd);

  // ---- FM path (supervised flow matching through encoder + FM head) ----
  {
    ModelValueField vfield(model, HeadKind::kFm);
    ModelTapeField tfield(model, HeadKind::kFm);
    const std::vector<FmItem> batch{FmItem{&fx.x0, &fx.cond}};
    const TimestepSampler ts(TimestepConfig{"fixed", 0.0, 1.0, fx.t_fm});
    auto eval = [&]() {
      Rng probe(fx.fm_probe_seed);
      return fm_loss_value(vfield, batch, ts, probe);
    };
    model.registry().zero_grads();
    {
      Rng probe(fx.fm_probe_seed);
      fm_loss_backward(tfield, batch, ts, probe);
    }
    const auto an_phi = grab_grads(model.phi());
    const auto an_theta = grab_grads(model.theta());
    // Routing: the FM loss must leave psi untouched.
    if (model.has_psi()) {
      for (const auto& p : model.psi().params) {
        if (p->grad.size() != 0 && p->grad.squaredNorm() != 0.0) {
          report.routing_ok = false;
          report.failure = "psi received supervised flow-matching gradient (" + p->name + ")";
        }
      }
    }
    report.fm_path.push_back(check_group(model.phi(), an_phi, eval, cfg.fd_step));
    report.fm_path.push_back(check_group(model.theta(), an_theta, eval, cfg.fd_step));
  }

  // ---- DMD surrogate path (frozen signal through predict_clean) ----
  {
    // Frozen signal g: teacher/fake difference with the weighting, evaluated
    // once at the base parameters on the renoised window; the checked map is
    // params -> sum(g ⊙ crop(predict_clean(x_t, t, v_psi))).
    const int k = cfg.frames - cfg.window;  // mid-sequence crop start
    GaussianMixture iso = GaussianMixture::single(Vec::Zero(cfg.model.data_dim), 1.0);
    AnalyticTeacher teacher(iso, iso);
    ModelConfig fake_cfg = cfg.model;
    fake_cfg.cond_dim = 0;
    fake_cfg.single_head = true;
    DdtModel fake_model(fake_cfg, mix_seed(cfg.seed, 3));
    ModelValueField fake(fake_model, HeadKind::kFm);

    Mat g;
    {
      const Mat v0 = model.velocity_value(HeadKind::kDm, fx.x_t, fx.t_dmd, fx.cond);
      const Mat win0 = predict_clean(fx.x_t, fx.t_dmd, v0).middleRows(k, cfg.window);
      const Mat noised = renoise(win0, fx.t_dmd, mix_seed(cfg.seed, 4));
      const Mat no_cond(cfg.window, 0);
      const Mat vf = fake.velocity(noised, fx.t_dmd, no_cond);
      const Mat ut = teacher.velocity(noised, fx.t_dmd, no_cond);
      const double lambda =
          lambda_weight(fx.t_dmd, win0, predict_clean(noised, fx.t_dmd, ut), LambdaConfig{});
      g = lambda * (vf - ut);
    }

    auto eval_on_tape = [&](ag::Tape& tape) {
      const ag::Tape::Id x_node = tape.constant(fx.x_t);
      const ag::Tape::Id v = model.forward_velocity(tape, HeadKind::kDm, x_node, fx.t_dmd, fx.cond);
      const ag::Tape::Id x0_hat = tape.add(x_node, tape.scale(v, fx.t_dmd));
      const ag::Tape::Id win = tape.slice_rows(x0_hat, k, cfg.window);
      ag::Tape::Id j = tape.dot_const(win, g);
      if (cfg.inject_routing_fault) {
        // Test fixture: leak the FM head into the surrogate objective.
        const ag::Tape::Id fm_leak =
            model.forward_velocity(tape, HeadKind::kFm, x_node, fx.t_dmd, fx.cond);
        j = tape.add(j, tape.scale(tape.sum(fm_leak), 1e-3));
      }
      return j;
    };
    auto eval = [&]() {
      ag::Tape tape;
      return tape.val(eval_on_tape(tape))(0, 0);
    };

    model.registry().zero_grads();
    {
      ag::Tape tape;
      tape.backward(eval_on_tape(tape));
    }
    if (model.has_psi()) {
      for (const auto& p : model.theta().params) {
        if (p->grad.size() != 0 && p->grad.squaredNorm() != 0.0) {
          report.routing_ok = false;
          report.failure = "theta received distribution-matching gradient (" + p->name + ")";
          break;
        }
      }
    }
    const auto an_phi = grab_grads(model.phi());
    report.dmd_path.push_back(check_group(model.phi(), an_phi, eval, cfg.fd_step));
    if (model.has_psi()) {
      const auto an_psi = grab_grads(model.psi());
      report.dmd_path.push_back(check_group(model.psi(), an_psi, eval, cfg.fd_step));
    }
  }

  return report;
}

}  // namespace flowlab
