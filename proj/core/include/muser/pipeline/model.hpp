#pragma once

#include <array>
#include <optional>

#include "muser/decode/decoder.hpp"
#include "muser/med/med.hpp"
#include "muser/pipeline/config.hpp"
#include "muser/repr/batch.hpp"
#include "muser/repr/vocab.hpp"
#include "muser/vq/codebook.hpp"
#include "muser/vq/encoder.hpp"

namespace muser::pipeline {

using num::Tensor;
using num::Var;

struct LossBreakdown {
  std::array<double, repr::kElementCount> rec{};
  double rec_total = 0.0;
  double commit = 0.0;
  double reg = 0.0;
  bool reg_computed = false;
  double total = 0.0;
};

/// rec + beta * commit + alpha * reg.
double total_loss(double rec, double commit, double reg, double alpha, double beta);

/// Quantization held fixed: z_q = z_e + offset with a constant offset, so
/// the whole loss becomes smooth in the parameters (gradient checks).
struct FrozenQuantization {
  Tensor z_q;
  Tensor offset;
};

struct ForwardOptions {
  double alpha = 0.1;
  double beta = 0.25;
  bool compute_reg = true;
  const FrozenQuantization* frozen = nullptr;
};

struct ForwardResult {
  Var z_e;
  vq::QuantizeResult quantized;
  Var z_q;  // straight-through (or frozen) latent fed to the decoder and DR
  std::array<Var, repr::kElementCount> logits;
  std::array<Var, repr::kElementCount> rec;
  Var rec_total, commit, reg, total;
  std::array<Var, repr::kElementCount> z_dr;
  std::array<Tensor, repr::kElementCount> element_matrices;

  [[nodiscard]] LossBreakdown breakdown() const;
};

/// Encoder, EMA codebook, DR model and two-level decoder for one config.
class MuserModel {
 public:
  MuserModel(const ModelConfig& config, std::uint64_t seed);

  [[nodiscard]] const ModelConfig& config() const { return config_; }
  [[nodiscard]] const repr::Vocabulary& vocab() const { return vocab_; }
  [[nodiscard]] med::ElementSlicing slicing() const { return {config_.slice_width}; }

  /// Pads to N_max with all-zero tokens.
  [[nodiscard]] repr::TokenBatch make_batch(std::span<const repr::CpSequence> sequences) const;
  [[nodiscard]] repr::TokenBatch make_batch(std::span<const repr::CpSequence* const> sequences) const;

  ForwardResult forward(num::Tape& tape, const repr::TokenBatch& batch, const ForwardOptions& options);
  /// Inference-mode encode + quantize.
  vq::QuantizeResult encode(const repr::TokenBatch& batch, num::Precision precision = num::Precision::f64);

  /// Encoder, DR and decoder parameters in a fixed order (codebook excluded).
  num::ParamList parameters();
  num::ParamList dr_parameters();

  vq::Encoder encoder;
  vq::Codebook codebook;
  med::DrModel dr;
  decode::TwoLevelDecoder decoder;
  bool codebook_seeded = false;

 private:
  ModelConfig config_;
  repr::Vocabulary vocab_;
};

struct Accuracy {
  std::array<double, repr::kElementCount> per_element{};
  double mean = 0.0;  // average of the seven heads
};

/// Arg-max agreement of teacher-forced logits with targets over real steps.
Accuracy teacher_forced_accuracy(const ForwardResult& result, const repr::TokenBatch& batch);
/// Inference-mode convenience wrapper.
Accuracy evaluate_accuracy(MuserModel& model, const repr::TokenBatch& batch);

struct DisentanglementReport {
  std::array<double, repr::kElementCount> agreement{};
  double mean = 0.0;
};

/// Sign agreement between M^e and M^{e,R} on a batch, inference mode.
DisentanglementReport sign_agreement(MuserModel& model, const repr::TokenBatch& batch);

}  // namespace muser::pipeline
