#pragma once

#include <string>
#include <vector>

#include "flowlab/model.hpp"

namespace flowlab {

struct GradCheckConfig {
  ModelConfig model;
  int frames = 8;
  int window = 4;       // crop length for the surrogate path
  double fd_step = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  bool inject_routing_fault = false;  // negative-control fixture

  // A3 fixture: encoder width 16 depth 2, T=8, D=2, double precision.
  static GradCheckConfig tiny();
};

struct GradGroupReport {
  std::string group;
  double max_rel_err = 0.0;
  std::size_t values_checked = 0;
  std::size_t param_values = 0;
};

struct GradCheckReport {
  std::vector<GradGroupReport> fm_path;
  std::vector<GradGroupReport> dmd_path;
  bool routing_ok = true;
  std::string failure;  // names the offending group on failure
  double tol = 1e-4;

  bool pass() const;
  std::string to_text() const;
};

// Central-difference verification of the supervised flow-matching path and
// the distribution-matching surrogate path (frozen signal, differentiated
// through predict_clean into the encoder and DM head), plus exact
// gradient-routing zero checks.
GradCheckReport run_gradcheck(const GradCheckConfig& cfg);

}  // namespace flowlab
