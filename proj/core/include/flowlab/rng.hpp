#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <Eigen/Dense>

namespace flowlab {

// splitmix64; used to derive independent child seeds from (seed, stream id).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard and the
// uniform/normal transforms below avoid the implementation-defined
// std::*_distribution adapters, so streams replay bit-identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  // Independent stream derived from this rng's construction seed.
  Rng child(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }

  // Raw 64-bit word, e.g. for deriving noise seeds.
  std::uint64_t raw() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer on [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Marsaglia polar; one value cached.
  double normal();

  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  std::string serialize() const;
  static Rng deserialize(const std::string& state);

 private:
  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flowlab
