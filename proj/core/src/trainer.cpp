#include "flowlab/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::json timestep_to_json(const TimestepConfig& c) {
  return {{"family", c.family}, {"lo", c.lo}, {"hi", c.hi}, {"value", c.value}};
}

TimestepConfig timestep_from_json(const nlohmann::json& j, TimestepConfig d) {
  d.family = j.value("family", d.family);
  d.lo = j.value("lo", d.lo);
  d.hi = j.value("hi", d.hi);
  d.value = j.value("value", d.value);
  return d;
}

nlohmann::json lambda_to_json(const LambdaConfig& c) {
  return {{"scheme", c.scheme}, {"c0", c.c0}, {"floor", c.floor}};
}

LambdaConfig lambda_from_json(const nlohmann::json& j, LambdaConfig d) {
  d.scheme = j.value("scheme", d.scheme);
  d.c0 = j.value("c0", d.c0);
  d.floor = j.value("floor", d.floor);
  return d;
}

void diff_json(const nlohmann::json& a, const nlohmann::json& b, const std::string& path,
               std::vector<std::string>& out) {
  if (a == b) return;
  if (a.is_object() && b.is_object()) {
    for (auto& [k, v] : a.items()) {
      if (!b.contains(k))
        out.push_back(path + "/" + k + ": removed");
      else
        diff_json(v, b[k], path + "/" + k, out);
    }
    for (auto& [k, v] : b.items())
      if (!a.contains(k)) out.push_back(path + "/" + k + ": added = " + v.dump());
    return;
  }
  out.push_back(path + ": " + a.dump() + " -> " + b.dump());
}

}  // namespace

nlohmann::json TeacherTrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch", batch},
          {"val_every", val_every},
          {"val_fraction", val_fraction},
          {"init_seed", init_seed},
          {"optim", optim.to_json()},
          {"t_sampler", timestep_to_json(t_sampler)}};
}

TeacherTrainConfig TeacherTrainConfig::from_json(const nlohmann::json& j) {
  TeacherTrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.val_every = j.value("val_every", c.val_every);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.init_seed = j.value("init_seed", c.init_seed);
  if (j.contains("optim")) c.optim = OptimConfig::from_json(j["optim"]);
  if (j.contains("t_sampler")) c.t_sampler = timestep_from_json(j["t_sampler"], c.t_sampler);
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"warmup_steps", warmup_steps},
          {"total_steps", total_steps},
          {"fake_steps", fake_steps},
          {"batch_long", batch_long},
          {"batch_rollouts", batch_rollouts},
          {"windows_per_rollout", windows_per_rollout},
          {"fake_batch_windows", fake_batch_windows},
          {"fake_prewarm_steps", fake_prewarm_steps},
          {"lambda_seg", lambda_seg},
          {"mode", mode},
          {"nfe", nfe},
          {"schedule", schedule},
          {"checkpoint_every", checkpoint_every},
          {"mixed_short_per_batch", mixed_short_per_batch},
          {"use_boundary_fix", use_boundary_fix},
          {"stride", stride},
          {"seed", seed},
          {"optim", optim.to_json()},
          {"fake_optim", fake_optim.to_json()},
          {"t_sft", timestep_to_json(t_sft)},
          {"t_seg", timestep_to_json(t_seg)},
          {"lambda", lambda_to_json(lambda)}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.fake_steps = j.value("fake_steps", c.fake_steps);
  c.batch_long = j.value("batch_long", c.batch_long);
  c.batch_rollouts = j.value("batch_rollouts", c.batch_rollouts);
  c.windows_per_rollout = j.value("windows_per_rollout", c.windows_per_rollout);
  c.fake_batch_windows = j.value("fake_batch_windows", c.fake_batch_windows);
  c.fake_prewarm_steps = j.value("fake_prewarm_steps", c.fake_prewarm_steps);
  c.lambda_seg = j.value("lambda_seg", c.lambda_seg);
  c.mode = j.value("mode", c.mode);
  c.nfe = j.value("nfe", c.nfe);
  c.schedule = j.value("schedule", c.schedule);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.mixed_short_per_batch = j.value("mixed_short_per_batch", c.mixed_short_per_batch);
  c.use_boundary_fix = j.value("use_boundary_fix", c.use_boundary_fix);
  c.stride = j.value("stride", c.stride);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optim")) c.optim = OptimConfig::from_json(j["optim"]);
  if (j.contains("fake_optim")) c.fake_optim = OptimConfig::from_json(j["fake_optim"]);
  if (j.contains("t_sft")) c.t_sft = timestep_from_json(j["t_sft"], c.t_sft);
  if (j.contains("t_seg")) c.t_seg = timestep_from_json(j["t_seg"], c.t_seg);
  if (j.contains("lambda")) c.lambda = lambda_from_json(j["lambda"], c.lambda);
  const bool known = c.mode == "full" || c.mode == "no_dual_head" || c.mode == "no_dmd" ||
                     c.mode == "no_sft" || c.mode == "mixed_sft";
  if (!known) throw ConfigError("train: unknown mode '" + c.mode + "'");
  return c;
}

void RunConfig::resolve_derived() {
  model.data_dim = world.dim;
  model.cond_dim = world.n_regimes;
  model.max_frames = 4 * world.t_long;
  model.single_head = train.mode == "no_dual_head";
  teacher_model.data_dim = world.dim;
  teacher_model.cond_dim = 0;
  teacher_model.single_head = true;
  teacher_model.max_frames = 4 * world.t_long;
}

nlohmann::json RunConfig::to_json() const {
  return {{"world", world.to_json()},
          {"data", data.to_json()},
          {"model", model.to_json()},
          {"teacher_model", teacher_model.to_json()},
          {"teacher_train", teacher_train.to_json()},
          {"train", train.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  c.teacher_model = ModelConfig{};
  c.teacher_model.encoder = BlockConfig{3, 64, 4, 4};
  c.teacher_model.head = BlockConfig{1, 64, 4, 2};
  if (j.contains("world")) c.world = WorldConfig::from_json(j["world"]);
  if (j.contains("data")) c.data = DataConfig::from_json(j["data"]);
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"]);
  if (j.contains("teacher_model")) c.teacher_model = ModelConfig::from_json(j["teacher_model"]);
  if (j.contains("teacher_train")) c.teacher_train = TeacherTrainConfig::from_json(j["teacher_train"]);
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"]);
  c.resolve_derived();
  return c;
}

RunConfig RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::config_hash() const {
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx",
                static_cast<unsigned long long>(fnv1a(canonical_dump())));
  return std::string(out);
}

nlohmann::json StepLog::to_json() const {
  return {{"step", step},
          {"sft_loss", sft_loss},
          {"seg_surrogate", seg_surrogate},
          {"fake_loss", fake_loss},
          {"fake_steps", fake_steps},
          {"lambda_mean", lambda_mean},
          {"sft_grad_phi", sft_grad_phi},
          {"sft_grad_theta", sft_grad_theta},
          {"sft_grad_psi", sft_grad_psi},
          {"seg_grad_phi", seg_grad_phi},
          {"seg_grad_theta", seg_grad_theta},
          {"seg_grad_psi", seg_grad_psi},
          {"grad_norm", grad_norm}};
}

Trainer::Trainer(RunConfig cfg, const DataSplit* data, const VelocityField* teacher,
                 std::filesystem::path run_dir)
    : cfg_(std::move(cfg)), data_(data), teacher_(teacher), run_dir_(std::move(run_dir)) {
  cfg_.resolve_derived();
  if (data_ == nullptr) throw DataError("trainer: no data split");
  if (data_->long_train.empty()) throw DataError("trainer: empty long-train split");
  for (const auto& rec : data_->long_train) {
    if (!rec.seq.latents.allFinite())
      throw DataError("trainer: non-finite latents in long-train record");
    long_conds_.push_back(
        rec.seq.condition.per_frame(rec.seq.length(), cfg_.world.n_regimes));
  }
}

bool Trainer::mode_has_sft() const { return cfg_.train.mode != "no_sft"; }

bool Trainer::mode_has_seg() const {
  const std::string& m = cfg_.train.mode;
  const bool mode_ok = m == "full" || m == "no_dual_head" || m == "no_sft";
  return mode_ok && cfg_.train.lambda_seg != 0.0;
}

std::vector<bool> Trainer::active_mask(bool warmup_phase) const {
  const auto sizes = state_.student->group_sizes();
  std::vector<bool> mask(sizes[0] + sizes[1] + sizes[2], false);
  auto set_range = [&mask](std::size_t lo, std::size_t n) {
    for (std::size_t i = lo; i < lo + n; ++i) mask[i] = true;
  };
  set_range(0, sizes[0]);  // phi always trains
  const std::string& m = cfg_.train.mode;
  if (warmup_phase || m == "no_dmd" || m == "mixed_sft" || m == "no_dual_head") {
    set_range(sizes[0], sizes[1]);  // theta
  } else if (m == "no_sft") {
    set_range(sizes[0] + sizes[1], sizes[2]);  // psi only
  } else {  // full
    set_range(sizes[0], sizes[1]);
    set_range(sizes[0] + sizes[1], sizes[2]);
  }
  return mask;
}

void Trainer::init(bool resume) {
  const std::uint64_t seed = cfg_.train.seed;
  state_.student = std::make_unique<DdtModel>(cfg_.model, mix_seed(seed, 101));
  state_.opt = std::make_unique<Adam>(cfg_.train.optim, state_.student->registry());
  if (mode_has_seg()) {
    state_.fake = std::make_unique<DdtModel>(cfg_.teacher_model, mix_seed(seed, 102));
    state_.fake_opt = std::make_unique<Adam>(cfg_.train.fake_optim, state_.fake->registry());
  }
  state_.rng_data = Rng(mix_seed(seed, 11));
  state_.rng_sft = Rng(mix_seed(seed, 12));
  state_.rng_seg = Rng(mix_seed(seed, 13));
  state_.rng_fake = Rng(mix_seed(seed, 14));
  state_.buffer = RolloutBuffer(static_cast<std::size_t>(std::max(1, cfg_.train.batch_rollouts)));
  state_.step = 0;
  state_.warmup_done = 0;
  state_.psi_initialized = false;

  std::filesystem::create_directories(run_dir_);
  std::filesystem::create_directories(run_dir_ / "checkpoints");
  const auto config_path = run_dir_ / "config.json";

  if (resume) {
    const auto latest = run_dir_ / "checkpoints" / "latest.flab";
    if (!std::filesystem::exists(latest))
      throw DataError("resume requested but no checkpoint at " + latest.string());
    Container c = Container::read(latest);
    const std::string stored_hash = c.meta.value("config_hash", "");
    if (stored_hash != cfg_.config_hash()) {
      std::vector<std::string> diffs;
      diff_json(c.meta.value("config", nlohmann::json::object()), cfg_.to_json(), "", diffs);
      std::string msg = "resume refused: config differs from checkpointed run";
      for (std::size_t i = 0; i < diffs.size() && i < 12; ++i) msg += "\n  " + diffs[i];
      throw ConfigError(msg);
    }
    state_.student->load_params(c, "model/");
    state_.opt->load(c, "opt/");
    if (state_.fake) {
      state_.fake->load_params(c, "fake/");
      state_.fake_opt->load(c, "fake_opt/");
    }
    state_.step = c.meta.at("step").get<std::int64_t>();
    state_.warmup_done = c.meta.at("warmup_done").get<std::int64_t>();
    state_.psi_initialized = c.meta.at("psi_initialized").get<bool>();
    state_.rng_data = Rng::deserialize(c.meta.at("rng_data").get<std::string>());
    state_.rng_sft = Rng::deserialize(c.meta.at("rng_sft").get<std::string>());
    state_.rng_seg = Rng::deserialize(c.meta.at("rng_seg").get<std::string>());
    state_.rng_fake = Rng::deserialize(c.meta.at("rng_fake").get<std::string>());
  } else {
    std::ofstream os(config_path);
    os << cfg_.canonical_dump() << "\n";
  }
  metrics_.open(run_dir_ / "metrics.jsonl", std::ios::app);
}

std::vector<FmItem> Trainer::draw_sft_batch(std::vector<const CorpusRecord*>& hold) {
  std::vector<FmItem> batch;
  hold.clear();
  for (int b = 0; b < cfg_.train.batch_long; ++b) {
    const std::size_t i = state_.rng_data.uniform_index(data_->long_train.size());
    hold.push_back(&data_->long_train[i]);
    batch.push_back(FmItem{&data_->long_train[i].seq.latents, &long_conds_[i]});
  }
  if (cfg_.train.mode == "mixed_sft" && !data_->short_pool.empty()) {
    for (int b = 0; b < cfg_.train.mixed_short_per_batch; ++b) {
      const std::size_t i = state_.rng_data.uniform_index(data_->short_pool.size());
      const Mat& lat = data_->short_pool[i].seq.latents;
      mixed_conds_.emplace_back(Mat::Zero(lat.rows(), cfg_.world.n_regimes));
      batch.push_back(FmItem{&lat, &mixed_conds_.back()});
    }
  }
  return batch;
}

double Trainer::warmup_step() {
  state_.student->registry().zero_grads();
  std::vector<const CorpusRecord*> hold;
  const auto batch = draw_sft_batch(hold);
  ModelTapeField field(*state_.student, HeadKind::kFm);
  const double loss = fm_loss_backward(field, batch, TimestepSampler(cfg_.train.t_sft),
                                       state_.rng_sft);
  const auto mask = active_mask(true);
  state_.opt->step(&mask);
  ++state_.warmup_done;
  mixed_conds_.clear();
  return loss;
}

void Trainer::finish_warmup() {
  if (state_.psi_initialized) return;
  if (state_.student->has_psi()) state_.student->copy_theta_to_psi();
  if (state_.fake) {
    init_fake_from_teacher();
    if (cfg_.train.fake_prewarm_steps > 0) {
      // Analytic teachers give the fake nothing to copy; warm it on initial
      // student rollouts before the first joint step.
      state_.buffer.clear();
      for (int r = 0; r < std::max(1, cfg_.train.batch_rollouts); ++r) {
        const std::size_t i = state_.rng_seg.uniform_index(data_->long_train.size());
        RolloutEntry e;
        e.cond = long_conds_[i];
        e.seed = state_.rng_seg.raw();
        e.student_step = state_.step;
        RolloutResult rr = student_rollout(*state_.student, e.cond, cfg_.train.nfe, e.seed,
                                           cfg_.train.schedule);
        e.seq.latents = rr.x0;
        e.seq.kinds.assign(static_cast<std::size_t>(rr.x0.rows()), LatentKind::kDelta);
        e.seq.kinds[0] = LatentKind::kAbsolute;
        state_.buffer.push(std::move(e));
      }
      fake_update(*state_.fake, *state_.fake_opt, state_.buffer, cfg_.train.fake_prewarm_steps,
                  cfg_.train.fake_batch_windows, cfg_.world.window,
                  TimestepSampler(cfg_.train.t_sft), state_.rng_fake,
                  cfg_.train.use_boundary_fix);
    }
  }
  state_.psi_initialized = true;
}

void Trainer::init_fake_from_teacher() {
  const auto* learned = dynamic_cast<const LearnedTeacher*>(teacher_);
  if (learned == nullptr) return;
  state_.fake->copy_params_from(learned->model());
}

StepLog Trainer::joint_step() {
  StepLog log;
  log.step = state_.step + 1;
  const bool do_sft = mode_has_sft();
  const bool do_seg = mode_has_seg();
  if (do_seg && teacher_ == nullptr)
    throw ConfigError("trainer: mode '" + cfg_.train.mode +
                      "' needs a teacher; run the teacher pretraining command first");

  ag::ParamRegistry& reg = state_.student->registry();
  reg.zero_grads();
  if (state_.fake) state_.fake->registry().zero_grads();

  const auto sizes = state_.student->group_sizes();
  auto group_norm = [&](std::size_t lo, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = lo; i < lo + n; ++i)
      s += reg.params[i]->grad.size() ? reg.params[i]->grad.squaredNorm() : 0.0;
    return std::sqrt(s);
  };

  // (1) Supervised flow matching on real long sequences: gradients reach
  // (phi, theta) only.
  std::vector<const CorpusRecord*> hold;
  if (do_sft) {
    const auto batch = draw_sft_batch(hold);
    ModelTapeField field(*state_.student, HeadKind::kFm);
    log.sft_loss =
        fm_loss_backward(field, batch, TimestepSampler(cfg_.train.t_sft), state_.rng_sft);
    log.sft_grad_phi = group_norm(0, sizes[0]);
    log.sft_grad_theta = group_norm(sizes[0], sizes[1]);
    log.sft_grad_psi = group_norm(sizes[0] + sizes[1], sizes[2]);
    if (state_.student->has_psi() && log.sft_grad_psi != 0.0)
      throw AssertionFailure("routing violated: SFT gradient reached psi (norm " +
                             std::to_string(log.sft_grad_psi) + ")");
  }

  // Snapshot theta gradients so the surrogate pass can be checked for exact
  // non-interference (skipped for the single-head ablation, where collision
  // is the point).
  std::vector<Mat> theta_snapshot;
  if (do_seg && !cfg_.model.single_head) {
    theta_snapshot.reserve(sizes[1]);
    for (std::size_t i = sizes[0]; i < sizes[0] + sizes[1]; ++i)
      theta_snapshot.push_back(reg.params[i]->grad);
  }
  const double phi_before_seg = group_norm(0, sizes[0]);
  const double psi_before_seg = group_norm(sizes[0] + sizes[1], sizes[2]);

  // (2) On-policy rollouts + the window-level reverse-KL surrogate:
  // gradients reach (phi, psi) only.
  if (do_seg) {
    state_.buffer.clear();
    std::vector<RolloutEntry> entries;
    for (int r = 0; r < cfg_.train.batch_rollouts; ++r) {
      const std::size_t i = state_.rng_seg.uniform_index(data_->long_train.size());
      RolloutEntry e;
      e.cond = long_conds_[i];
      e.seed = state_.rng_seg.raw();
      e.student_step = state_.step;
      entries.push_back(std::move(e));
    }

    DmdConfig dmd;
    dmd.nfe = cfg_.train.nfe;
    dmd.schedule = cfg_.train.schedule;
    dmd.windows_per_rollout = cfg_.train.windows_per_rollout;
    dmd.lambda = cfg_.train.lambda;
    dmd.t_sampler = cfg_.train.t_seg;
    dmd.window_length = cfg_.world.window;
    dmd.stride = cfg_.train.stride;
    dmd.use_boundary_fix = cfg_.train.use_boundary_fix;

    std::vector<RolloutEntry*> mut;
    for (auto& e : entries) mut.push_back(&e);
    const int total_windows = cfg_.train.batch_rollouts * cfg_.train.windows_per_rollout;
    const DmdStats stats =
        dmd_gradient(*state_.student, mut, *teacher_, ModelValueField(*state_.fake, HeadKind::kFm),
                     dmd, state_.rng_seg, cfg_.train.lambda_seg / total_windows);
    log.seg_surrogate = stats.surrogate;
    log.lambda_mean = stats.mean_lambda;

    for (auto& e : entries) state_.buffer.push(std::move(e));

    if (!cfg_.model.single_head) {
      for (std::size_t i = 0; i < theta_snapshot.size(); ++i) {
        const Mat& now = reg.params[sizes[0] + i]->grad;
        const bool same = now.rows() == theta_snapshot[i].rows() && now == theta_snapshot[i];
        if (!same)
          throw AssertionFailure("routing violated: surrogate gradient reached theta (" +
                                 reg.params[sizes[0] + i]->name + ")");
      }
    }
    if (state_.fake != nullptr) {
      double fake_norm = 0.0;
      for (const ag::Parameter* p : state_.fake->registry().params)
        fake_norm += p->grad.size() ? p->grad.squaredNorm() : 0.0;
      if (fake_norm != 0.0)
        throw AssertionFailure("stop-gradient violated: surrogate gradient reached the fake "
                               "estimator");
    }

    const double phi_after = group_norm(0, sizes[0]);
    const double psi_after = group_norm(sizes[0] + sizes[1], sizes[2]);
    // Contribution norms: psi had exactly zero before, phi is reported as the
    // change in accumulated norm (diagnostic only).
    log.seg_grad_psi = psi_after - psi_before_seg;
    log.seg_grad_phi = std::abs(phi_after - phi_before_seg);
    log.seg_grad_theta = 0.0;
    if (cfg_.model.single_head) log.seg_grad_theta = group_norm(sizes[0], sizes[1]);
  }

  // (3) One optimizer application of the summed total gradient.
  const auto mask = active_mask(false);
  log.grad_norm = state_.opt->step(&mask);

  // (4) Strict alternation: the fake estimator trains only between student
  // updates, on the rollouts the student just produced.
  if (do_seg) {
    state_.buffer.check_staleness(state_.step + 1, 1);
    const FakeUpdateStats fs = fake_update(
        *state_.fake, *state_.fake_opt, state_.buffer, cfg_.train.fake_steps,
        cfg_.train.fake_batch_windows, cfg_.world.window, TimestepSampler(cfg_.train.t_sft),
        state_.rng_fake, cfg_.train.use_boundary_fix);
    log.fake_loss = fs.mean_loss;
    log.fake_steps = fs.steps;
  }

  ++state_.step;
  mixed_conds_.clear();
  return log;
}

void Trainer::append_metrics(const StepLog& log) {
  nlohmann::json j = log.to_json();
  j["mode"] = cfg_.train.mode;
  metrics_ << j.dump() << "\n";
  metrics_.flush();
}

void Trainer::run(const std::function<void(const StepLog&)>& on_step) {
  while (state_.warmup_done < cfg_.train.warmup_steps) {
    const double loss = warmup_step();
    if ((state_.warmup_done % 100) == 0) {
      nlohmann::json j{{"warmup_step", state_.warmup_done}, {"sft_loss", loss}};
      metrics_ << j.dump() << "\n";
    }
  }
  finish_warmup();
  while (state_.step < cfg_.train.total_steps) {
    const StepLog log = joint_step();
    append_metrics(log);
    if (on_step) on_step(log);
    if (cfg_.train.checkpoint_every > 0 && state_.step % cfg_.train.checkpoint_every == 0 &&
        state_.step < cfg_.train.total_steps)
      save_checkpoint("s" + std::to_string(state_.step), false);
  }
  save_checkpoint("final", true);
}

std::filesystem::path Trainer::checkpoint_path(const std::string& tag) const {
  return run_dir_ / "checkpoints" / ("ckpt_" + tag + ".flab");
}

void Trainer::save_checkpoint(const std::string& tag, bool final_mark) {
  Container c;
  c.meta["kind"] = "checkpoint";
  c.meta["final"] = final_mark;
  c.meta["step"] = state_.step;
  c.meta["warmup_done"] = state_.warmup_done;
  c.meta["psi_initialized"] = state_.psi_initialized;
  c.meta["config"] = cfg_.to_json();
  c.meta["config_hash"] = cfg_.config_hash();
  c.meta["rng_data"] = state_.rng_data.serialize();
  c.meta["rng_sft"] = state_.rng_sft.serialize();
  c.meta["rng_seg"] = state_.rng_seg.serialize();
  c.meta["rng_fake"] = state_.rng_fake.serialize();
  state_.student->add_params(c, "model/");
  state_.opt->save(c, "opt/");
  if (state_.fake) {
    state_.fake->add_params(c, "fake/");
    state_.fake_opt->save(c, "fake_opt/");
  }
  c.write(checkpoint_path(tag));
  c.write(run_dir_ / "checkpoints" / "latest.flab");
}

TeacherTrainResult train_teacher(const RunConfig& cfg, const DataSplit& data,
                                 const std::filesystem::path& out_dir,
                                 const std::function<void(const nlohmann::json&)>& log) {
  if (data.short_pool.empty()) throw DataError("train_teacher: empty short pool");
  RunConfig rc = cfg;
  rc.resolve_derived();

  const std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(rc.teacher_train.val_fraction *
                                  static_cast<double>(data.short_pool.size())));
  const std::size_t n_train = data.short_pool.size() - n_val;
  if (n_train == 0) throw DataError("train_teacher: pool too small for the validation split");

  DdtModel teacher(rc.teacher_model, mix_seed(rc.teacher_train.init_seed, 1));
  Adam opt(rc.teacher_train.optim, teacher.registry());
  Rng rng(mix_seed(rc.teacher_train.init_seed, 2));
  const TimestepSampler ts(rc.teacher_train.t_sampler);
  ModelTapeField field(teacher, HeadKind::kFm);
  ModelValueField value_field(teacher, HeadKind::kFm);

  // Constant-zero-field reference on the validation slice:
  // E||x0 - z||^2 = ||x0||^2 + numel.
  double baseline = 0.0;
  for (std::size_t i = n_train; i < data.short_pool.size(); ++i) {
    const Mat& x0 = data.short_pool[i].seq.latents;
    baseline += x0.squaredNorm() + static_cast<double>(x0.size());
  }
  baseline /= static_cast<double>(n_val);

  auto val_loss = [&]() {
    std::vector<FmItem> batch;
    for (std::size_t i = n_train; i < data.short_pool.size(); ++i)
      batch.push_back(FmItem{&data.short_pool[i].seq.latents, nullptr});
    Rng probe(9999);  // fixed probe stream keeps evaluations comparable
    return fm_loss_value(value_field, batch, ts, probe);
  };

  double last_val = 0.0;
  for (int step = 1; step <= rc.teacher_train.steps; ++step) {
    teacher.registry().zero_grads();
    std::vector<FmItem> batch;
    for (int b = 0; b < rc.teacher_train.batch; ++b) {
      const std::size_t i = rng.uniform_index(n_train);
      batch.push_back(FmItem{&data.short_pool[i].seq.latents, nullptr});
    }
    const double loss = fm_loss_backward(field, batch, ts, rng);
    opt.step();
    if (step % rc.teacher_train.val_every == 0 || step == rc.teacher_train.steps) {
      last_val = val_loss();
      if (log) log({{"teacher_step", step}, {"train_loss", loss}, {"val_loss", last_val}});
    }
  }

  std::filesystem::create_directories(out_dir);
  Container c;
  c.meta["kind"] = "teacher";
  c.meta["immutable"] = true;
  c.meta["final_val_loss"] = last_val;
  c.meta["baseline_val_loss"] = baseline;
  c.meta["config"] = rc.to_json();
  teacher.add_params(c, "model/");
  const auto path = out_dir / "teacher.flab";
  c.write(path);
  return TeacherTrainResult{last_val, baseline, path};
}

}  // namespace flowlab
