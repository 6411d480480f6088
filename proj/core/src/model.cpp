#include "flowlab/model.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

nlohmann::json BlockConfig::to_json() const {
  return {{"depth", depth}, {"width", width}, {"heads", heads}, {"mlp_ratio", mlp_ratio}};
}

BlockConfig BlockConfig::from_json(const nlohmann::json& j, const BlockConfig& defaults) {
  BlockConfig c = defaults;
  c.depth = j.value("depth", c.depth);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  return c;
}

nlohmann::json ModelConfig::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"head", head.to_json()},
          {"data_dim", data_dim},
          {"cond_dim", cond_dim},
          {"max_frames", max_frames},
          {"single_head", single_head},
          {"rope_base", rope_base},
          {"init_std", init_std}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  if (j.contains("encoder")) c.encoder = BlockConfig::from_json(j["encoder"], c.encoder);
  if (j.contains("head")) c.head = BlockConfig::from_json(j["head"], c.head);
  c.data_dim = j.value("data_dim", c.data_dim);
  c.cond_dim = j.value("cond_dim", c.cond_dim);
  c.max_frames = j.value("max_frames", c.max_frames);
  c.single_head = j.value("single_head", c.single_head);
  c.rope_base = j.value("rope_base", c.rope_base);
  c.init_std = j.value("init_std", c.init_std);
  return c;
}

ag::Parameter& ParamGroup::make(const std::string& pname, int rows, int cols) {
  params.push_back(std::make_unique<ag::Parameter>());
  ag::Parameter& p = *params.back();
  p.name = name + "/" + pname;
  p.value = Mat::Zero(rows, cols);
  return p;
}

std::size_t ParamGroup::count_values() const {
  std::size_t n = 0;
  for (const auto& p : params) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamGroup::zero_grads() {
  for (const auto& p : params) p->zero_grad();
}

double ParamGroup::grad_norm() const {
  double s = 0.0;
  for (const auto& p : params) s += p->grad.size() ? p->grad.squaredNorm() : 0.0;
  return std::sqrt(s);
}

struct DdtModel::Block {
  ag::Parameter* ln1_g;
  ag::Parameter* ln1_b;
  ag::Parameter* wq;
  ag::Parameter* bq;
  ag::Parameter* wk;
  ag::Parameter* bk;
  ag::Parameter* wv;
  ag::Parameter* bv;
  ag::Parameter* wo;
  ag::Parameter* bo;
  ag::Parameter* ln2_g;
  ag::Parameter* ln2_b;
  ag::Parameter* w1;
  ag::Parameter* b1;
  ag::Parameter* w2;
  ag::Parameter* b2;
};

DdtModel::~DdtModel() = default;

Mat time_embedding_row(double t, int width) {
  Mat e(1, width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    const double arg = 1000.0 * t * freq;
    e(0, 2 * i) = std::sin(arg);
    e(0, 2 * i + 1) = std::cos(arg);
  }
  if (width % 2 == 1) e(0, width - 1) = 0.0;
  return e;
}

DdtModel::Tower DdtModel::build_tower(ParamGroup& group, const std::string& prefix,
                                      const BlockConfig& bc) {
  Tower tower;
  for (int d = 0; d < bc.depth; ++d) {
    auto block = std::make_unique<Block>();
    const std::string b = prefix + "blocks." + std::to_string(d) + ".";
    const int w = bc.width;
    const int m = bc.width * bc.mlp_ratio;
    block->ln1_g = &group.make(b + "ln1.gamma", 1, w);
    block->ln1_b = &group.make(b + "ln1.beta", 1, w);
    block->wq = &group.make(b + "attn.wq", w, w);
    block->bq = &group.make(b + "attn.bq", 1, w);
    block->wk = &group.make(b + "attn.wk", w, w);
    block->bk = &group.make(b + "attn.bk", 1, w);
    block->wv = &group.make(b + "attn.wv", w, w);
    block->bv = &group.make(b + "attn.bv", 1, w);
    block->wo = &group.make(b + "attn.wo", w, w);
    block->bo = &group.make(b + "attn.bo", 1, w);
    block->ln2_g = &group.make(b + "ln2.gamma", 1, w);
    block->ln2_b = &group.make(b + "ln2.beta", 1, w);
    block->w1 = &group.make(b + "mlp.w1", w, m);
    block->b1 = &group.make(b + "mlp.b1", 1, m);
    block->w2 = &group.make(b + "mlp.w2", m, w);
    block->b2 = &group.make(b + "mlp.b2", 1, w);
    tower.blocks.push_back(std::move(block));
  }
  tower.ln_f_gamma = &group.make(prefix + "ln_f.gamma", 1, bc.width);
  tower.ln_f_beta = &group.make(prefix + "ln_f.beta", 1, bc.width);
  return tower;
}

DdtModel::HeadNet DdtModel::build_head(ParamGroup& group, const std::string& prefix) {
  HeadNet head;
  if (cfg_.head.width != cfg_.encoder.width)
    throw ConfigError("model: head width must match encoder width (shared representation)");
  if (cfg_.cond_dim > 0) head.w_cond = &group.make(prefix + "cond.w", cfg_.cond_dim, cfg_.head.width);
  head.tower = build_tower(group, prefix, cfg_.head);
  head.w_out = &group.make(prefix + "out.w", cfg_.head.width, cfg_.data_dim);
  head.b_out = &group.make(prefix + "out.b", 1, cfg_.data_dim);
  return head;
}

DdtModel::DdtModel(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  if (cfg_.encoder.width % cfg_.encoder.heads != 0 || cfg_.head.width % cfg_.head.heads != 0)
    throw ConfigError("model: width must be divisible by attention head count");
  if ((cfg_.encoder.width / cfg_.encoder.heads) % 2 != 0)
    throw ConfigError("model: per-head dimension must be even for the rotary map");
  if (cfg_.head.depth >= cfg_.encoder.depth)
    throw ConfigError("model: decoder heads must be strictly shallower than the encoder");

  w_in_ = &phi_.make("in.w", cfg_.data_dim + cfg_.cond_dim, cfg_.encoder.width);
  b_in_ = &phi_.make("in.b", 1, cfg_.encoder.width);
  encoder_ = build_tower(phi_, "enc.", cfg_.encoder);
  fm_head_ = build_head(theta_, "fm.");
  if (!cfg_.single_head) dm_head_ = build_head(psi_, "dm.");

  // "Lightweight" heads: fewer than a quarter of the encoder's values.
  if (theta_.count_values() * 4 >= phi_.count_values())
    throw ConfigError("model: head parameter count must stay below 25% of the encoder's (head " +
                      std::to_string(theta_.count_values()) + " vs encoder " +
                      std::to_string(phi_.count_values()) + ")");

  init_params(init_seed);

  for (const auto& p : phi_.params) registry_.add(*p);
  for (const auto& p : theta_.params) registry_.add(*p);
  for (const auto& p : psi_.params) registry_.add(*p);
}

void DdtModel::init_params(std::uint64_t seed) {
  Rng rng(seed);
  auto init_group = [&](ParamGroup& g) {
    for (auto& p : g.params) {
      const auto dot = p->name.find_last_of('.');
      const std::string leaf = dot == std::string::npos ? p->name : p->name.substr(dot + 1);
      if (leaf == "gamma") {
        p->value.setOnes();
      } else if (leaf == "beta" || leaf[0] == 'b') {
        p->value.setZero();
      } else {
        p->value = cfg_.init_std * rng.normal_matrix(p->value.rows(), p->value.cols());
      }
      p->zero_grad();
    }
  };
  init_group(phi_);
  init_group(theta_);
  init_group(psi_);
}

ParamGroup& DdtModel::psi() {
  if (cfg_.single_head)
    throw ConfigError("model: DM-specific routing requested but the single-head variant is active");
  return psi_;
}

const ParamGroup& DdtModel::psi_const() const {
  if (cfg_.single_head)
    throw ConfigError("model: DM-specific routing requested but the single-head variant is active");
  return psi_;
}

ag::Tape::Id DdtModel::run_tower(ag::Tape& tape, const Tower& tower, ag::Tape::Id x,
                                 int n_heads) const {
  using Id = ag::Tape::Id;
  const int width = static_cast<int>(tape.val(x).cols());
  const int dh = width / n_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (const auto& block : tower.blocks) {
    Id a = tape.layer_norm(x, tape.param(*block->ln1_g), tape.param(*block->ln1_b));
    Id q = tape.add_row_broadcast(tape.matmul(a, tape.param(*block->wq)), tape.param(*block->bq));
    Id k = tape.add_row_broadcast(tape.matmul(a, tape.param(*block->wk)), tape.param(*block->bk));
    Id v = tape.add_row_broadcast(tape.matmul(a, tape.param(*block->wv)), tape.param(*block->bv));
    Id merged = -1;
    for (int h = 0; h < n_heads; ++h) {
      Id qh = tape.rope(tape.slice_cols(q, h * dh, dh), 0, cfg_.rope_base);
      Id kh = tape.rope(tape.slice_cols(k, h * dh, dh), 0, cfg_.rope_base);
      Id vh = tape.slice_cols(v, h * dh, dh);
      Id scores = tape.scale(tape.matmul_nt(qh, kh), att_scale);
      Id attn = tape.softmax_rows(scores);  // full attention, no causal mask
      Id oh = tape.matmul(attn, vh);
      merged = h == 0 ? oh : tape.hconcat(merged, oh);
    }
    Id o = tape.add_row_broadcast(tape.matmul(merged, tape.param(*block->wo)),
                                  tape.param(*block->bo));
    x = tape.add(x, o);

    Id m = tape.layer_norm(x, tape.param(*block->ln2_g), tape.param(*block->ln2_b));
    Id m1 = tape.gelu(
        tape.add_row_broadcast(tape.matmul(m, tape.param(*block->w1)), tape.param(*block->b1)));
    Id m2 = tape.add_row_broadcast(tape.matmul(m1, tape.param(*block->w2)), tape.param(*block->b2));
    x = tape.add(x, m2);
  }
  return tape.layer_norm(x, tape.param(*tower.ln_f_gamma), tape.param(*tower.ln_f_beta));
}

ag::Tape::Id DdtModel::encode(ag::Tape& tape, ag::Tape::Id x_node, double t, const Mat& cond) {
  const auto frames = tape.val(x_node).rows();
  if (frames > cfg_.max_frames)
    throw InputError("encode: sequence of " + std::to_string(frames) +
                     " frames exceeds the configured positional range " +
                     std::to_string(cfg_.max_frames));
  if (t < 0.0 || t > 1.0) throw InputError("encode: t outside [0,1]");
  if (tape.val(x_node).cols() != cfg_.data_dim)
    throw InputError("encode: data dimension mismatch");
  if (cfg_.cond_dim > 0 && (cond.rows() != frames || cond.cols() != cfg_.cond_dim))
    throw InputError("encode: condition must be T x cond_dim");

  ag::Tape::Id input = x_node;
  if (cfg_.cond_dim > 0) input = tape.hconcat(x_node, tape.constant(cond));
  ag::Tape::Id tokens =
      tape.add_row_broadcast(tape.matmul(input, tape.param(*w_in_)), tape.param(*b_in_));
  const Mat temb = time_embedding_row(t, cfg_.encoder.width).replicate(frames, 1);
  tokens = tape.add_const(tokens, temb);
  return run_tower(tape, encoder_, tokens, cfg_.encoder.heads);
}

ag::Tape::Id DdtModel::run_head(ag::Tape& tape, const HeadNet& head, ag::Tape::Id h, double t,
                                const Mat& cond) {
  const auto frames = tape.val(h).rows();
  const Mat temb = time_embedding_row(t, cfg_.head.width).replicate(frames, 1);
  ag::Tape::Id x = tape.add_const(h, temb);
  if (cfg_.cond_dim > 0)
    x = tape.add(x, tape.matmul(tape.constant(cond), tape.param(*head.w_cond)));
  x = run_tower(tape, head.tower, x, cfg_.head.heads);
  return tape.add_row_broadcast(tape.matmul(x, tape.param(*head.w_out)), tape.param(*head.b_out));
}

ag::Tape::Id DdtModel::head_velocity(ag::Tape& tape, HeadKind which, ag::Tape::Id h, double t,
                                     const Mat& cond) {
  const bool use_fm = which == HeadKind::kFm || cfg_.single_head;
  return run_head(tape, use_fm ? fm_head_ : dm_head_, h, t, cond);
}

ag::Tape::Id DdtModel::forward_velocity(ag::Tape& tape, HeadKind which, ag::Tape::Id x_node,
                                        double t, const Mat& cond) {
  return head_velocity(tape, which, encode(tape, x_node, t, cond), t, cond);
}

Mat DdtModel::encode_value(const Mat& x_t, double t, const Mat& cond) const {
  ag::Tape tape;
  auto* self = const_cast<DdtModel*>(this);
  return tape.val(self->encode(tape, tape.constant(x_t), t, cond));
}

Mat DdtModel::velocity_value(HeadKind which, const Mat& x_t, double t, const Mat& cond) const {
  ag::Tape tape;
  auto* self = const_cast<DdtModel*>(this);
  return tape.val(self->forward_velocity(tape, which, tape.constant(x_t), t, cond));
}

void DdtModel::copy_theta_to_psi() {
  ParamGroup& p = psi();  // throws in single-head mode
  if (p.params.size() != theta_.params.size())
    throw ConfigError("model: head groups are not congruent");
  for (std::size_t i = 0; i < p.params.size(); ++i) p.params[i]->value = theta_.params[i]->value;
}

void DdtModel::copy_params_from(const DdtModel& other) {
  if (registry_.size() != other.registry_.size())
    throw ConfigError("copy_params_from: parameter counts differ");
  for (std::size_t i = 0; i < registry_.size(); ++i) {
    ag::Parameter* dst = registry_.params[i];
    const ag::Parameter* src = other.registry_.params[i];
    if (dst->name != src->name || dst->value.rows() != src->value.rows() ||
        dst->value.cols() != src->value.cols())
      throw ConfigError("copy_params_from: models are not congruent at " + dst->name);
    dst->value = src->value;
  }
}

nlohmann::json DdtModel::partition_manifest() const {
  nlohmann::json m = nlohmann::json::object();
  auto put = [&m](const ParamGroup& g) {
    for (const auto& p : g.params) {
      if (m.contains(p->name)) throw ConfigError("partition: duplicate parameter " + p->name);
      m[p->name] = g.name;
    }
  };
  put(phi_);
  put(theta_);
  put(psi_);
  return m;
}

void DdtModel::add_params(Container& c, const std::string& prefix) const {
  auto put = [&](const ParamGroup& g) {
    for (const auto& p : g.params) c.f64[prefix + p->name] = p->value;
  };
  put(phi_);
  put(theta_);
  put(psi_);
  c.meta[prefix + "manifest"] = partition_manifest();
  c.meta[prefix + "config"] = cfg_.to_json();
}

void DdtModel::load_params(const Container& c, const std::string& prefix) {
  const nlohmann::json manifest = c.meta.at(prefix + "manifest");
  // Disjointness is re-checked on load: every stored name maps to exactly one
  // group and must land in the group this model built it in.
  auto take = [&](ParamGroup& g) {
    for (auto& p : g.params) {
      if (!manifest.contains(p->name))
        throw DataError("checkpoint missing parameter in manifest: " + p->name);
      if (manifest.at(p->name).get<std::string>() != g.name)
        throw DataError("checkpoint routes " + p->name + " to group " +
                        manifest.at(p->name).get<std::string>() + ", expected " + g.name);
      const Mat& v = c.mat(prefix + p->name);
      if (v.rows() != p->value.rows() || v.cols() != p->value.cols())
        throw DataError("checkpoint shape mismatch for " + p->name);
      p->value = v;
    }
  };
  take(phi_);
  take(theta_);
  take(psi_);
}

}  // namespace flowlab
