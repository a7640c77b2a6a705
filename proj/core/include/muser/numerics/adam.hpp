#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "muser/numerics/tape.hpp"

namespace muser::num {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 0.0;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

struct AdamReport {
  bool applied = false;
  double grad_norm = 0.0;
  std::string message;
};

/// Bias-corrected Adam update using each parameter's accumulated `grad`.
/// A non-finite gradient skips the step and is reported, leaving state
/// untouched. Shape mismatches throw.
AdamReport adam_step(std::span<Parameter* const> params, AdamState& state, double lr);

}  // namespace muser::num
