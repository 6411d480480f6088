#pragma once

#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include "flowlab/dmd.hpp"
#include "flowlab/model.hpp"
#include "flowlab/optim.hpp"
#include "flowlab/world.hpp"

namespace flowlab {

// Internal-contract violation (routing equalities, stop-gradient zeros).
struct AssertionFailure : std::logic_error {
  explicit AssertionFailure(const std::string& msg) : std::logic_error(msg) {}
};

struct TeacherTrainConfig {
  int steps = 2500;
  int batch = 16;
  int val_every = 100;
  double val_fraction = 0.05;
  std::uint64_t init_seed = 1234;
  OptimConfig optim;
  TimestepConfig t_sampler;

  nlohmann::json to_json() const;
  static TeacherTrainConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  int warmup_steps = 500;
  int total_steps = 1000;   // joint steps after warmup
  int fake_steps = 5;       // fake-estimator updates between student updates
  int batch_long = 4;
  int batch_rollouts = 2;
  int windows_per_rollout = 2;
  int fake_batch_windows = 8;
  int fake_prewarm_steps = 0;  // used with analytic teachers (no weights to copy)
  double lambda_seg = 1.0;
  std::string mode = "full";  // full | no_dual_head | no_dmd | no_sft | mixed_sft
  int nfe = 4;
  std::vector<double> schedule;  // empty -> default few-step schedule
  int checkpoint_every = 500;
  int mixed_short_per_batch = 2;
  bool use_boundary_fix = true;
  int stride = 0;  // 0 -> window length
  std::uint64_t seed = 0;
  OptimConfig optim;
  OptimConfig fake_optim;
  TimestepConfig t_sft{"uniform", 1e-3, 1.0 - 1e-3, 0.5};
  TimestepConfig t_seg{"uniform", 0.02, 0.98, 0.5};
  LambdaConfig lambda;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// Full experiment description; serialized verbatim into the run directory
// before step 0. Derived model fields (condition width, data dim, positional
// range) are resolved once here so the snapshot alone reproduces the run.
struct RunConfig {
  WorldConfig world;
  DataConfig data;
  ModelConfig model;
  ModelConfig teacher_model;
  TeacherTrainConfig teacher_train;
  TrainConfig train;

  void resolve_derived();
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load_file(const std::filesystem::path& path);
  std::string canonical_dump() const { return to_json().dump(2); }
  std::string config_hash() const;
};

struct StepLog {
  std::int64_t step = 0;
  double sft_loss = 0.0;
  double seg_surrogate = 0.0;
  double fake_loss = 0.0;
  int fake_steps = 0;
  double lambda_mean = 0.0;
  double sft_grad_phi = 0.0;
  double sft_grad_theta = 0.0;
  double sft_grad_psi = 0.0;
  double seg_grad_phi = 0.0;
  double seg_grad_theta = 0.0;
  double seg_grad_psi = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm at the optimizer step

  nlohmann::json to_json() const;
};

struct TrainState {
  std::unique_ptr<DdtModel> student;
  std::unique_ptr<DdtModel> fake;
  std::unique_ptr<Adam> opt;
  std::unique_ptr<Adam> fake_opt;
  RolloutBuffer buffer{8};
  std::int64_t step = 0;
  std::int64_t warmup_done = 0;
  bool psi_initialized = false;
  Rng rng_data, rng_sft, rng_seg, rng_fake;
};

class Trainer {
 public:
  Trainer(RunConfig cfg, const DataSplit* data, const VelocityField* teacher,
          std::filesystem::path run_dir);

  // Fresh state or checkpoint resume; resume verifies the config hash and
  // refuses with a key-by-key diff on mismatch.
  void init(bool resume);

  void run(const std::function<void(const StepLog&)>& on_step = nullptr_cb());

  double warmup_step();
  StepLog joint_step();
  void finish_warmup();  // psi <- theta copy + fake init (+ prewarm)

  TrainState& state() { return state_; }
  const RunConfig& config() const { return cfg_; }

  void save_checkpoint(const std::string& tag, bool final_mark);
  std::filesystem::path checkpoint_path(const std::string& tag) const;

  // Parameter groups the active mode trains (warmup trains phi+theta only).
  std::vector<bool> active_mask(bool warmup_phase) const;

 private:
  static std::function<void(const StepLog&)> nullptr_cb() { return {}; }

  RunConfig cfg_;
  const DataSplit* data_;
  const VelocityField* teacher_;
  std::filesystem::path run_dir_;
  TrainState state_;
  std::vector<Mat> long_conds_;   // cached per-frame condition matrices
  std::deque<Mat> mixed_conds_;   // per-step zero conditions for mixed batches
  std::ofstream metrics_;

  bool mode_has_sft() const;
  bool mode_has_seg() const;
  void append_metrics(const StepLog& log);
  std::vector<FmItem> draw_sft_batch(std::vector<const CorpusRecord*>& hold);
  void init_fake_from_teacher();
};

struct TeacherTrainResult {
  double final_val_loss = 0.0;
  double baseline_val_loss = 0.0;  // constant-zero-field reference
  std::filesystem::path checkpoint;
};

// Pretrains the frozen short-window teacher by flow matching on the encoded
// short pool and writes an immutable checkpoint into out_dir.
TeacherTrainResult train_teacher(const RunConfig& cfg, const DataSplit& data,
                                 const std::filesystem::path& out_dir,
                                 const std::function<void(const nlohmann::json&)>& log = {});

}  // namespace flowlab
