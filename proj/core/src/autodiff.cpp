#include "flowlab/autodiff.hpp"

#include <cmath>

#include "flowlab/errors.hpp"

namespace flowlab::ag {

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tape::Id Tape::push(Mat value, std::function<void(Tape&, Id)> back, Parameter* p) {
  nodes_.push_back(Node{std::move(value), Mat(), false, p, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

void Tape::accum(Id id, const Mat& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
  } else {
    n.grad += g;
  }
}

Tape::Id Tape::constant(Mat v) { return push(std::move(v), nullptr); }

Tape::Id Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return it->second;
  Id id = push(p.value, nullptr, &p);
  param_nodes_.emplace(&p, id);
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  return push(val(a) + val(b), [a, b](Tape& t, Id self) {
    t.accum(a, t.grad(self));
    t.accum(b, t.grad(self));
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  return push(val(a) - val(b), [a, b](Tape& t, Id self) {
    t.accum(a, t.grad(self));
    t.accum(b, -t.grad(self));
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  return push(val(a).cwiseProduct(val(b)), [a, b](Tape& t, Id self) {
    t.accum(a, t.grad(self).cwiseProduct(t.val(b)));
    t.accum(b, t.grad(self).cwiseProduct(t.val(a)));
  });
}

Tape::Id Tape::scale(Id a, double s) {
  return push(val(a) * s, [a, s](Tape& t, Id self) { t.accum(a, t.grad(self) * s); });
}

Tape::Id Tape::add_const(Id a, const Mat& c) {
  return push(val(a) + c, [a](Tape& t, Id self) { t.accum(a, t.grad(self)); });
}

Tape::Id Tape::mul_const(Id a, const Mat& c) {
  return push(val(a).cwiseProduct(c), [a, c](Tape& t, Id self) {
    t.accum(a, t.grad(self).cwiseProduct(c));
  });
}

Tape::Id Tape::matmul(Id a, Id b) {
  if (val(a).cols() != val(b).rows())
    throw InputError("matmul: inner dimensions do not match");
  return push(val(a) * val(b), [a, b](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    t.accum(a, go * t.val(b).transpose());
    t.accum(b, t.val(a).transpose() * go);
  });
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  if (val(a).cols() != val(b).cols())
    throw InputError("matmul_nt: inner dimensions do not match");
  return push(val(a) * val(b).transpose(), [a, b](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    t.accum(a, go * t.val(b));
    t.accum(b, go.transpose() * t.val(a));
  });
}

Tape::Id Tape::add_row_broadcast(Id x, Id row) {
  Mat v = val(x);
  v.rowwise() += val(row).row(0);
  return push(std::move(v), [x, row](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    t.accum(x, go);
    t.accum(row, go.colwise().sum());
  });
}

Tape::Id Tape::hconcat(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  Mat v(va.rows(), va.cols() + vb.cols());
  v << va, vb;
  const int ca = static_cast<int>(va.cols());
  const int cb = static_cast<int>(vb.cols());
  return push(std::move(v), [a, b, ca, cb](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    t.accum(a, go.leftCols(ca));
    t.accum(b, go.rightCols(cb));
  });
}

Tape::Id Tape::vconcat(Id a, Id b) {
  const Mat& va = val(a);
  const Mat& vb = val(b);
  Mat v(va.rows() + vb.rows(), va.cols());
  v << va, vb;
  const int ra = static_cast<int>(va.rows());
  const int rb = static_cast<int>(vb.rows());
  return push(std::move(v), [a, b, ra, rb](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    t.accum(a, go.topRows(ra));
    t.accum(b, go.bottomRows(rb));
  });
}

Tape::Id Tape::slice_rows(Id a, int start, int n) {
  return push(val(a).middleRows(start, n), [a, start, n](Tape& t, Id self) {
    Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    g.middleRows(start, n) = t.grad(self);
    t.accum(a, g);
  });
}

Tape::Id Tape::slice_cols(Id a, int start, int n) {
  return push(val(a).middleCols(start, n), [a, start, n](Tape& t, Id self) {
    Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
    g.middleCols(start, n) = t.grad(self);
    t.accum(a, g);
  });
}

Tape::Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
  const Mat& v = val(x);
  const auto rows = v.rows();
  const auto cols = v.cols();
  Mat xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = v.row(r).mean();
    const double var = (v.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std(r) = is;
    xhat.row(r) = (v.row(r).array() - mu) * is;
  }
  Mat out = xhat;
  out.array().rowwise() *= val(gamma).row(0).array();
  out.rowwise() += val(beta).row(0);
  return push(std::move(out),
              [x, gamma, beta, xhat, inv_std](Tape& t, Id self) {
                const Mat& go = t.grad(self);
                t.accum(beta, go.colwise().sum());
                t.accum(gamma, go.cwiseProduct(xhat).colwise().sum());
                Mat dxhat = go;
                dxhat.array().rowwise() *= t.val(gamma).row(0).array();
                Mat dx(dxhat.rows(), dxhat.cols());
                for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                  const double m1 = dxhat.row(r).mean();
                  const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                  dx.row(r) = inv_std(r) *
                              (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                }
                t.accum(x, dx);
              });
}

Tape::Id Tape::gelu(Id x) {
  const Mat& v = val(x);
  Mat out = v.unaryExpr([](double a) { return 0.5 * a * (1.0 + std::erf(a * kInvSqrt2)); });
  return push(std::move(out), [x](Tape& t, Id self) {
    const Mat& v = t.val(x);
    Mat d = v.unaryExpr([](double a) {
      const double cdf = 0.5 * (1.0 + std::erf(a * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * a * a);
      return cdf + a * pdf;
    });
    t.accum(x, t.grad(self).cwiseProduct(d));
  });
}

Tape::Id Tape::softmax_rows(Id x) {
  const Mat& v = val(x);
  Mat out(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    Eigen::ArrayXd e = (v.row(r).array() - m).exp();
    out.row(r) = e / e.sum();
  }
  return push(std::move(out), [x](Tape& t, Id self) {
    const Mat& y = t.val(self);
    const Mat& go = t.grad(self);
    Mat dx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = go.row(r).cwiseProduct(y.row(r)).sum();
      dx.row(r) = (go.row(r).array() - dot) * y.row(r).array();
    }
    t.accum(x, dx);
  });
}

Tape::Id Tape::rope(Id x, int pos_offset, double base) {
  const Mat& v = val(x);
  const int cols = static_cast<int>(v.cols());
  if (cols % 2 != 0) throw InputError("rope: column count must be even");
  const int half = cols / 2;
  Mat cs(v.rows(), half), sn(v.rows(), half);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(base, -2.0 * i / cols);
      const double ang = (static_cast<double>(r) + pos_offset) * freq;
      cs(r, i) = std::cos(ang);
      sn(r, i) = std::sin(ang);
    }
  }
  Mat out(v.rows(), cols);
  for (int i = 0; i < half; ++i) {
    out.col(2 * i) = cs.col(i).cwiseProduct(v.col(2 * i)) - sn.col(i).cwiseProduct(v.col(2 * i + 1));
    out.col(2 * i + 1) = sn.col(i).cwiseProduct(v.col(2 * i)) + cs.col(i).cwiseProduct(v.col(2 * i + 1));
  }
  return push(std::move(out), [x, cs, sn, half](Tape& t, Id self) {
    const Mat& go = t.grad(self);
    Mat dx(go.rows(), go.cols());
    for (int i = 0; i < half; ++i) {
      dx.col(2 * i) = cs.col(i).cwiseProduct(go.col(2 * i)) + sn.col(i).cwiseProduct(go.col(2 * i + 1));
      dx.col(2 * i + 1) = -sn.col(i).cwiseProduct(go.col(2 * i)) + cs.col(i).cwiseProduct(go.col(2 * i + 1));
    }
    t.accum(x, dx);
  });
}

Tape::Id Tape::sum(Id x) {
  Mat out(1, 1);
  out(0, 0) = val(x).sum();
  return push(std::move(out), [x](Tape& t, Id self) {
    t.accum(x, Mat::Constant(t.val(x).rows(), t.val(x).cols(), t.grad(self)(0, 0)));
  });
}

Tape::Id Tape::sum_sq(Id x) {
  Mat out(1, 1);
  out(0, 0) = val(x).squaredNorm();
  return push(std::move(out), [x](Tape& t, Id self) {
    t.accum(x, 2.0 * t.grad(self)(0, 0) * t.val(x));
  });
}

Tape::Id Tape::dot_const(Id x, const Mat& g) {
  Mat out(1, 1);
  out(0, 0) = val(x).cwiseProduct(g).sum();
  return push(std::move(out), [x, g](Tape& t, Id self) {
    t.accum(x, t.grad(self)(0, 0) * g);
  });
}

void Tape::backward(Id root, GradSink* sink) {
  Node& r = nodes_[static_cast<std::size_t>(root)];
  if (r.value.rows() != 1 || r.value.cols() != 1)
    throw InputError("backward: root must be a scalar node");
  accum(root, Mat::Ones(1, 1));
  for (Id i = root; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.back) n.back(*this, i);
    if (n.param != nullptr) {
      if (sink != nullptr) {
        sink->add(*n.param, n.grad);
      } else {
        if (n.param->grad.size() == 0) n.param->zero_grad();
        n.param->grad += n.grad;
      }
    }
  }
}

}  // namespace flowlab::ag
