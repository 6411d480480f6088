#include "flowlab/rng.hpp"

#include <cmath>
#include <sstream>

namespace flowlab {

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t limit = std::mt19937_64::max() - std::mt19937_64::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  have_spare_ = true;
  return u * m;
}

Eigen::MatrixXd Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal();
  return out;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << seed_ << ' ' << engine_ << ' ' << (have_spare_ ? 1 : 0);
  if (have_spare_) {
    os << ' ';
    os.precision(17);
    os << std::hexfloat << spare_;
  }
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  Rng r;
  int spare_flag = 0;
  is >> r.seed_ >> r.engine_ >> spare_flag;
  r.have_spare_ = spare_flag != 0;
  if (r.have_spare_) is >> std::hexfloat >> r.spare_;
  return r;
}

}  // namespace flowlab
