#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "muser/numerics/nn.hpp"

namespace muser::num {

/// Builds a scalar from `x` on the tape that owns `x`.
using ScalarFn = std::function<Var(Var x)>;
/// Builds a scalar loss on a fresh tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // location of the largest error
};

/// max over coordinates of |analytic - central difference| / max(1, |analytic|),
/// evaluated in 64-bit.
/// `options` and `dropout_seed` configure every tape built during the check,
/// so training-mode dropout sees the same mask at each probe.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-6, TapeOptions options = {},
                           std::uint64_t dropout_seed = 0);

/// Same measure over parameters. When `max_coords_per_param` is non-zero a
/// seeded random subset of coordinates is probed in each parameter.
GradCheckResult grad_check_params(const LossFn& loss, const ParamList& params, double eps = 1e-6,
                                  std::size_t max_coords_per_param = 0, std::uint64_t seed = 0);

struct PrimitiveCheck {
  std::string primitive;
  GradCheckResult result;
};

/// grad_check of every registered primitive, each input in turn, at seeded
/// random inputs in 64-bit. Outputs are reduced with fixed random weights.
std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed = 0, double eps = 1e-6);

}  // namespace muser::num
