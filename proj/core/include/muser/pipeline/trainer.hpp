#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "muser/numerics/adam.hpp"
#include "muser/pipeline/model.hpp"

namespace muser::pipeline {

struct StepReport {
  std::uint64_t step = 0;
  LossBreakdown loss;
  bool applied = false;  // false when the step was aborted
  std::string message;
  double grad_norm = 0.0;
  std::size_t reseeded = 0;
};

/// One optimisation step per call: encode, commitment, quantize, slice +
/// DR + L_R per element, Dec_G, Dec_e cross-entropy, total loss, one Adam
/// step on Enc/DR/Dec_G/Dec_e, one EMA codebook update.
class Trainer {
 public:
  Trainer(MuserModel& model, const TrainConfig& config);

  StepReport train_step(const repr::TokenBatch& batch);

  [[nodiscard]] std::uint64_t step() const { return step_; }
  [[nodiscard]] const num::AdamState& adam() const { return adam_; }
  [[nodiscard]] std::string rng_state() const;
  void restore_rng(const std::string& state);
  num::Rng& rng() { return rng_; }

 private:
  MuserModel& model_;
  TrainConfig config_;
  num::ParamList params_;
  num::AdamState adam_;
  num::Rng rng_;
  std::uint64_t step_ = 0;
};

struct TrainRunReport {
  std::vector<StepReport> steps;
  double initial_total = 0.0;
  double final_total = 0.0;
  std::size_t aborted = 0;
};

using StepCallback = std::function<void(const StepReport&)>;

/// Runs the configured budget (`steps`, or `epochs` passes over the corpus)
/// with shuffled batches of `batch_size`. Stops at the first aborted step
/// when `stop_on_fault` is set.
TrainRunReport train(MuserModel& model, Trainer& trainer, std::span<const repr::CpSequence> corpus,
                     const TrainConfig& config, const StepCallback& on_step = {}, bool stop_on_fault = true);

}  // namespace muser::pipeline
