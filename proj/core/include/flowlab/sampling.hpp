#pragma once

#include "flowlab/dmd.hpp"
#include "flowlab/eval.hpp"
#include "flowlab/model.hpp"

namespace flowlab {

struct SampleOptions {
  int n = 128;
  int nfe = 4;
  HeadKind head = HeadKind::kDm;
  std::uint64_t seed = 0;
  std::vector<double> schedule;  // dm head only; empty -> default few-step
};

// Generates decoded long sequences under held-out scripts. The DM head uses
// the few-step rollout; the FM head integrates the probability-flow ODE with
// `nfe` uniform Euler steps. Scripts cycle through `script_source` so
// different systems are compared under identical conditions.
SampleArchive generate_archive(const DdtModel& model, const std::vector<CorpusRecord>& script_source,
                               int n_regimes, const SampleOptions& opt);

}  // namespace flowlab
