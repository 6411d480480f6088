#include "flowlab/optim.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab {

nlohmann::json OptimConfig::to_json() const {
  return {{"lr", lr},   {"beta1", beta1},         {"beta2", beta2},
          {"eps", eps}, {"clip_norm", clip_norm}, {"weight_decay", weight_decay}};
}

OptimConfig OptimConfig::from_json(const nlohmann::json& j) {
  OptimConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  return c;
}

Adam::Adam(OptimConfig cfg, ag::ParamRegistry& registry) : cfg_(cfg), reg_(&registry) {
  m_.reserve(registry.size());
  v_.reserve(registry.size());
  for (const ag::Parameter* p : registry.params) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

double Adam::step(const std::vector<bool>* active) {
  if (active != nullptr && active->size() != reg_->params.size())
    throw InputError("Adam::step: active mask length mismatch");
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < reg_->params.size(); ++i) {
    if (active != nullptr && !(*active)[i]) continue;
    const ag::Parameter* p = reg_->params[i];
    norm_sq += p->grad.size() ? p->grad.squaredNorm() : 0.0;
  }
  const double norm = std::sqrt(norm_sq);
  const double clip_scale =
      cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < reg_->params.size(); ++i) {
    if (active != nullptr && !(*active)[i]) continue;
    ag::Parameter* p = reg_->params[i];
    if (p->grad.size() == 0) p->zero_grad();
    const Mat g = clip_scale * p->grad;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mh = m_[i] / bc1;
    const Mat vh = v_[i] / bc2;
    if (cfg_.weight_decay > 0.0) p->value -= cfg_.lr * cfg_.weight_decay * p->value;
    p->value -= cfg_.lr * (mh.array() / (vh.array().sqrt() + cfg_.eps)).matrix();
  }
  return norm;
}

void Adam::save(Container& c, const std::string& prefix) const {
  for (std::size_t i = 0; i < reg_->params.size(); ++i) {
    c.f64[prefix + "m/" + reg_->params[i]->name] = m_[i];
    c.f64[prefix + "v/" + reg_->params[i]->name] = v_[i];
  }
  c.meta[prefix + "steps"] = t_;
}

void Adam::load(const Container& c, const std::string& prefix) {
  for (std::size_t i = 0; i < reg_->params.size(); ++i) {
    m_[i] = c.mat(prefix + "m/" + reg_->params[i]->name);
    v_[i] = c.mat(prefix + "v/" + reg_->params[i]->name);
  }
  t_ = c.meta.at(prefix + "steps").get<std::int64_t>();
}

}  // namespace flowlab
