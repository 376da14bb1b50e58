#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace svis {

// Violation of a documented precondition or shape contract. CLI exit code 1.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Filesystem / serialization failure. CLI exit code 2.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

using Rng = std::mt19937_64;

// Runtime counters for the normalization invariant (softmax rows summing
// to one). Disabled by default; the training harness can switch it on to
// audit every softmax evaluated during a run.
struct InvariantStats {
  bool enabled = false;
  long long rows_checked = 0;
  long long violations = 0;
  void reset() { rows_checked = 0; violations = 0; }
};

inline InvariantStats& invariant_stats() {
  static InvariantStats s;
  return s;
}

}  // namespace svis
