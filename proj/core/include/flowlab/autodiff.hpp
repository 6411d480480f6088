#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace flowlab {

using Mat = Eigen::MatrixXd;

namespace ag {

// A trainable array. `id` is assigned by the owning registry and indexes
// per-item gradient sinks during batched backprop.
struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  int id = -1;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  double grad_norm_sq() const { return grad.squaredNorm(); }
};

// Gradients for one batch item, indexed by Parameter::id. Summing sinks in
// item order keeps batched training bit-deterministic under any thread count.
struct GradSink {
  std::vector<Mat> grads;

  explicit GradSink(std::size_t n_params) : grads(n_params) {}
  void add(const Parameter& p, const Mat& g) {
    Mat& slot = grads[static_cast<std::size_t>(p.id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  }
};

// Ordered set of parameters owned by one model; assigns the ids GradSink
// indexes by.
struct ParamRegistry {
  std::vector<Parameter*> params;

  void add(Parameter& p) {
    p.id = static_cast<int>(params.size());
    params.push_back(&p);
  }
  std::size_t size() const { return params.size(); }

  void zero_grads() {
    for (Parameter* p : params) p->zero_grad();
  }

  void apply(const GradSink& sink, double scale) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = sink.grads[i];
      if (g.size() == 0) continue;
      if (params[i]->grad.size() == 0) params[i]->zero_grad();
      params[i]->grad += scale * g;
    }
  }

  double grad_norm() const {
    double s = 0.0;
    for (const Parameter* p : params) s += p->grad.size() ? p->grad.squaredNorm() : 0.0;
    return std::sqrt(s);
  }
};

// Reverse-mode tape over dense matrices. Append-only; creation order is the
// topological order used by backward().
class Tape {
 public:
  using Id = std::int32_t;

  Id constant(Mat v);
  Id param(Parameter& p);

  const Mat& val(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Mat& grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool has_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }
  std::size_t size() const { return nodes_.size(); }

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double s);
  Id add_const(Id a, const Mat& c);
  Id mul_const(Id a, const Mat& c);  // elementwise by a constant (e.g. loss mask)
  Id matmul(Id a, Id b);
  Id matmul_nt(Id a, Id b);  // a * b^T
  Id add_row_broadcast(Id x, Id row);  // every row of x += row (1×C)
  Id hconcat(Id a, Id b);
  Id vconcat(Id a, Id b);
  Id slice_rows(Id a, int start, int n);
  Id slice_cols(Id a, int start, int n);
  Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-6);
  Id gelu(Id x);
  Id softmax_rows(Id x);
  // Rotary map on column pairs; row r is rotated by angle (r+pos_offset)*freq_i.
  Id rope(Id x, int pos_offset, double base);
  Id sum(Id x);               // 1×1
  Id sum_sq(Id x);            // 1×1, sum of squares
  Id dot_const(Id x, const Mat& g);  // 1×1, sum(x ⊙ g)

  // Seeds d(root)=1 and sweeps the tape in reverse. Parameter gradients
  // accumulate into Parameter::grad, or into `sink` when given.
  void backward(Id root, GradSink* sink = nullptr);

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool has_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&, Id)> back;  // pulls from grad(self), pushes to parents
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, Id> param_nodes_;

  Id push(Mat value, std::function<void(Tape&, Id)> back, Parameter* p = nullptr);
  void accum(Id id, const Mat& g);
  friend struct TapeTestPeer;
};

}  // namespace ag
}  // namespace flowlab
