#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowlab/autodiff.hpp"
#include "flowlab/container.hpp"
#include "flowlab/flow.hpp"
#include "flowlab/rng.hpp"

namespace flowlab {

struct BlockConfig {
  int depth = 1;
  int width = 128;
  int heads = 4;
  int mlp_ratio = 4;

  nlohmann::json to_json() const;
  static BlockConfig from_json(const nlohmann::json& j, const BlockConfig& defaults);
};

struct ModelConfig {
  BlockConfig encoder{4, 128, 4, 4};
  BlockConfig head{1, 128, 4, 2};  // shared by the FM and DM heads
  int data_dim = 2;
  int cond_dim = 4;     // 0 = unconditional
  int max_frames = 256; // positional range; longer inputs are rejected
  bool single_head = false;
  double rope_base = 10000.0;
  double init_std = 0.02;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// Named, ordered parameter collection; one per routing group.
struct ParamGroup {
  std::string name;
  std::vector<std::unique_ptr<ag::Parameter>> params;

  ag::Parameter& make(const std::string& pname, int rows, int cols);
  std::size_t count_values() const;
  void zero_grads();
  double grad_norm() const;
};

enum class HeadKind { kFm, kDm };

// Shared bidirectional encoder (group phi) with two decoder heads: the FM
// head (theta) for supervised flow matching and the DM head (psi) for
// teacher distribution matching. Groups are disjoint by construction and the
// partition manifest travels with every checkpoint.
class DdtModel {
 public:
  DdtModel(ModelConfig cfg, std::uint64_t init_seed);
  ~DdtModel();
  DdtModel(const DdtModel&) = delete;
  DdtModel& operator=(const DdtModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ag::ParamRegistry& registry() { return registry_; }
  const ag::ParamRegistry& registry() const { return registry_; }

  ParamGroup& phi() { return phi_; }
  ParamGroup& theta() { return theta_; }
  // Throws ConfigError in single-head mode: there is no DM-specific group.
  ParamGroup& psi();
  const ParamGroup& psi_const() const;
  bool has_psi() const { return !cfg_.single_head; }

  // h_t = E_phi(x_t, t, c); full attention over all frames, no causal mask.
  ag::Tape::Id encode(ag::Tape& tape, ag::Tape::Id x_node, double t, const Mat& cond);
  ag::Tape::Id head_velocity(ag::Tape& tape, HeadKind which, ag::Tape::Id h, double t,
                             const Mat& cond);
  ag::Tape::Id forward_velocity(ag::Tape& tape, HeadKind which, ag::Tape::Id x_node, double t,
                                const Mat& cond);

  // Value-only wrappers (run a scratch tape, no gradients).
  Mat encode_value(const Mat& x_t, double t, const Mat& cond) const;
  Mat velocity_value(HeadKind which, const Mat& x_t, double t, const Mat& cond) const;

  // psi <- copy of theta; used after FM-only warmup.
  void copy_theta_to_psi();

  nlohmann::json partition_manifest() const;
  void add_params(Container& c, const std::string& prefix) const;
  void load_params(const Container& c, const std::string& prefix);
  // Copy values from a congruent model (same architecture and names).
  void copy_params_from(const DdtModel& other);

  std::size_t n_params() const { return registry_.size(); }
  // {phi, theta, psi} parameter-object counts, in registry order.
  std::array<std::size_t, 3> group_sizes() const {
    return {phi_.params.size(), theta_.params.size(), psi_.params.size()};
  }

 private:
  struct Block;
  ModelConfig cfg_;
  ParamGroup phi_{"phi"};
  ParamGroup theta_{"theta"};
  ParamGroup psi_{"psi"};
  ag::ParamRegistry registry_;

  struct Tower {  // encoder or one head
    std::vector<std::unique_ptr<Block>> blocks;
    ag::Parameter* ln_f_gamma = nullptr;
    ag::Parameter* ln_f_beta = nullptr;
  };
  struct HeadNet {
    Tower tower;
    ag::Parameter* w_cond = nullptr;  // cond injection, absent when cond_dim == 0
    ag::Parameter* w_out = nullptr;
    ag::Parameter* b_out = nullptr;
  };

  ag::Parameter* w_in_ = nullptr;
  ag::Parameter* b_in_ = nullptr;
  Tower encoder_;
  HeadNet fm_head_;
  HeadNet dm_head_;

  void init_params(std::uint64_t seed);
  ag::Tape::Id run_tower(ag::Tape& tape, const Tower& tower, ag::Tape::Id x, int n_heads) const;
  ag::Tape::Id run_head(ag::Tape& tape, const HeadNet& head, ag::Tape::Id h, double t,
                        const Mat& cond);
  Tower build_tower(ParamGroup& group, const std::string& prefix, const BlockConfig& bc);
  HeadNet build_head(ParamGroup& group, const std::string& prefix);
};

// Sinusoidal embedding of the scalar timestep, one row of `width` entries.
Mat time_embedding_row(double t, int width);

// Adapters to the flow-core field interfaces.
class ModelTapeField final : public TapeVelocityField {
 public:
  ModelTapeField(DdtModel& model, HeadKind head) : model_(model), head_(head) {}
  ag::Tape::Id velocity(ag::Tape& tape, const Mat& state, double t, const Mat& cond) override {
    return model_.forward_velocity(tape, head_, tape.constant(state), t, cond);
  }
  ag::ParamRegistry& registry() override { return model_.registry(); }

 private:
  DdtModel& model_;
  HeadKind head_;
};

class ModelValueField final : public VelocityField {
 public:
  ModelValueField(const DdtModel& model, HeadKind head) : model_(model), head_(head) {}
  Mat velocity(const Mat& state, double t, const Mat& cond) const override {
    return model_.velocity_value(head_, state, t, cond);
  }

 private:
  const DdtModel& model_;
  HeadKind head_;
};

}  // namespace flowlab
