#pragma once

#include <deque>
#include <filesystem>
#include <memory>
#include <vector>

#include "flowlab/model.hpp"
#include "flowlab/optim.hpp"
#include "flowlab/windows.hpp"
#include "flowlab/world.hpp"

namespace flowlab {

// Teachers are value-only velocity fields: the interface cannot produce
// parameter gradients, which is the frozen-teacher contract.

// Closed-form teacher over encoded windows: row 0 is scored against the
// absolute-latent mixture, later rows against the delta mixture, each row
// independently via the exact mixture velocity.
class AnalyticTeacher final : public VelocityField {
 public:
  AnalyticTeacher(GaussianMixture abs_mixture, GaussianMixture delta_mixture,
                  double eps_t = 1e-3);
  Mat velocity(const Mat& state, double t, const Mat& cond) const override;

  static AnalyticTeacher from_spec_file(const std::filesystem::path& path);

 private:
  GaussianMixture abs_;
  GaussianMixture delta_;
  double eps_t_;
};

// Frozen checkpoint-backed teacher (single-head, unconditional).
class LearnedTeacher final : public VelocityField {
 public:
  explicit LearnedTeacher(std::shared_ptr<const DdtModel> model);
  Mat velocity(const Mat& state, double t, const Mat& cond) const override;
  const DdtModel& model() const { return *model_; }

 private:
  std::shared_ptr<const DdtModel> model_;
};

// Loads either a checkpoint container (kind=="teacher") or a JSON mixture
// spec ({"abs": mixture, "delta": mixture}).
std::unique_ptr<VelocityField> load_teacher(const std::filesystem::path& path);

struct RolloutEntry {
  LatentSequence seq;        // student output with kinds/condition attached
  Mat cond;                  // per-frame condition matrix fed to the model
  std::uint64_t seed = 0;    // generation noise seed
  std::int64_t student_step = 0;
};

// On-policy sample store. Capacity-bounded FIFO; consumers must check
// staleness against the current student update counter.
class RolloutBuffer {
 public:
  explicit RolloutBuffer(std::size_t capacity = 4) : capacity_(capacity) {}

  void push(RolloutEntry e);
  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  const std::deque<RolloutEntry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  // Throws StalenessError when any entry is older than max_staleness student
  // updates.
  void check_staleness(std::int64_t current_step, int max_staleness = 1) const;

 private:
  std::size_t capacity_;
  std::deque<RolloutEntry> entries_;
};

std::vector<double> default_schedule(int nfe);  // {1, 1-1/nfe, ...}

struct RolloutResult {
  Mat x0;        // T x D
  int nfe_used;  // encoder+DM-head evaluations consumed
};

// Few-step sampler: at each scheduled t, predict the clean sequence from the
// DM head and re-noise to the next level with fresh noise.
RolloutResult student_rollout(const DdtModel& model, const Mat& cond, int nfe, std::uint64_t seed,
                              const std::vector<double>& schedule = {});

// Traced variant used by the surrogate: same arithmetic, same noise stream,
// but the rollout stays on the caller's tape so gradients can flow back.
struct TracedRollout {
  ag::Tape::Id x0_node;
  int nfe_used;
};
TracedRollout student_rollout_traced(ag::Tape& tape, DdtModel& model, const Mat& cond, int nfe,
                                     std::uint64_t seed, const std::vector<double>& schedule = {});

Mat renoise(const Mat& x0, double t, std::uint64_t seed);

struct LambdaConfig {
  std::string scheme = "inverse_deviation";  // or "constant"
  double c0 = 1.0;
  double floor = 1e-4;
};

// DMD weighting: c0 over the mean absolute deviation between the student
// window and the teacher's one-step denoised prediction, floored.
double lambda_weight(double t, const Mat& student_window, const Mat& teacher_denoised,
                     const LambdaConfig& cfg);

struct FakeUpdateStats {
  double mean_loss = 0.0;
  int steps = 0;
};

// k_steps of flow matching for the fake estimator on boundary-fixed windows
// cropped from buffered student outputs. Student and teacher parameters are
// untouched by construction (the buffer holds detached values).
FakeUpdateStats fake_update(DdtModel& fake, Adam& fake_opt, const RolloutBuffer& buffer,
                            int k_steps, int batch_windows, int window_length,
                            const TimestepSampler& ts, Rng& rng, bool use_boundary_fix = true);

struct DmdConfig {
  int nfe = 4;
  std::vector<double> schedule;  // empty -> default_schedule(nfe)
  int windows_per_rollout = 1;
  LambdaConfig lambda;
  TimestepConfig t_sampler{"uniform", 0.02, 0.98, 0.5};
  int window_length = 16;
  int stride = 0;  // 0 -> window_length
  bool use_boundary_fix = true;
};

struct DmdStats {
  double surrogate = 0.0;    // mean of the scalar g.x̂0 couplings
  double mean_lambda = 0.0;
  int windows = 0;
};

// The window-level reverse-KL gradient surrogate. Rolls each entry's
// condition on-policy under the current parameters (filling entry->seq with
// the produced values), samples (t, k) per window, forms the boundary-fixed
// noised window, and backpropagates lambda(t) * (v_fake - u_teacher) through
// the clean window into the encoder and DM-head groups only. `scale`
// multiplies the accumulated gradients (lambda_seg / window count).
DmdStats dmd_gradient(DdtModel& student, const std::vector<RolloutEntry*>& rollouts,
                      const VelocityField& teacher, const VelocityField& fake,
                      const DmdConfig& cfg, Rng& rng, double scale);

// Single-window surrogate core shared by dmd_gradient, the gradient checker
// and the sanity worlds: given a clean window already on the tape, couples
// the stop-gradient signal g = lambda * (v_fake - u_teacher) evaluated on the
// renoised window with the window node.
struct WindowCoupling {
  ag::Tape::Id node;  // scalar coupling sum(mask ⊙ g ⊙ x̂0)
  double value;
  double lambda;
};
WindowCoupling dmd_window_coupling(ag::Tape& tape, ag::Tape::Id window_node,
                                   const std::vector<bool>& loss_mask,
                                   const VelocityField& teacher, const VelocityField& fake,
                                   double t, const Mat& cond, const LambdaConfig& lambda_cfg,
                                   std::uint64_t noise_seed);

// Coupling plus immediate backward into `sink` (or Parameter::grad).
struct SurrogateResult {
  double coupling;
  double lambda;
};
SurrogateResult dmd_surrogate_window(ag::Tape& tape, ag::Tape::Id window_node,
                                     const std::vector<bool>& loss_mask,
                                     const VelocityField& teacher, const VelocityField& fake,
                                     double t, const Mat& cond, const LambdaConfig& lambda_cfg,
                                     std::uint64_t noise_seed, ag::GradSink* sink);

}  // namespace flowlab
