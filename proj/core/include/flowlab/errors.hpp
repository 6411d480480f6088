#pragma once

#include <stdexcept>
#include <string>

namespace flowlab {

// Error taxonomy mirrors the CLI exit codes: config 2, data 3, numerical 4,
// assertion 5. Everything else surfaces as a generic failure.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Rejected inputs: shape mismatches, out-of-range windows, malformed sequences.
struct InputError : std::invalid_argument {
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Monte-Carlo estimate whose effective sample size fell below the floor.
struct UnreliableEstimateError : std::runtime_error {
  double ess;
  UnreliableEstimateError(const std::string& msg, double ess_)
      : std::runtime_error(msg), ess(ess_) {}
};

// A capability the caller asked for is deliberately unsupported.
struct CapabilityError : std::runtime_error {
  explicit CapabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

// On-policy contract breach: consumed rollout older than one student update.
struct StalenessError : std::runtime_error {
  explicit StalenessError(const std::string& msg) : std::runtime_error(msg) {}
};

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumerical = 4,
  kExitAssertion = 5,
};

}  // namespace flowlab
