#pragma once

#include <cstdint>
#include <vector>

#include "muser/numerics/grad_check.hpp"
#include "muser/pipeline/config.hpp"

namespace muser::pipeline {

struct ModelGradCheckOptions {
  std::size_t max_len = 16;            // N
  std::size_t batch = 2;               // m
  std::size_t coords_per_param = 4;    // sampled coordinates per tensor; 0 = all
  double eps = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::vector<num::PrimitiveCheck> primitives;
  num::GradCheckResult model;
  double max_rel_error = 0.0;  // over primitives and the model loss
  [[nodiscard]] bool passed(double tolerance = 1e-4) const { return max_rel_error < tolerance; }
};

/// Full MusER loss (reconstruction, commitment and regularization) with the
/// quantization frozen at its value for the initial parameters, inference
/// mode, 64-bit, against central differences on sampled coordinates.
num::GradCheckResult check_model_gradients(const TrainConfig& config, const ModelGradCheckOptions& options = {});

/// Primitive sweep followed by the full-loss check.
GradCheckReport run_gradcheck(const TrainConfig& config, const ModelGradCheckOptions& options = {});

}  // namespace muser::pipeline
