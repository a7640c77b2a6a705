#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "muser/numerics/adam.hpp"
#include "muser/numerics/nn.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::pipeline {

using num::Var;

struct PriorConfig {
  std::size_t codebook_size = 64;
  std::size_t max_len = 256;
  num::TransformerShape shape;
  double dropout = 0.0;
};

/// Autoregressive model over code indices, p(z_i | z_<i, Emb(o)). Position
/// 0 holds the emotion embedding; position t > 0 the embedding of z_{t-1}.
class PriorModel {
 public:
  PriorModel(const PriorConfig& config, std::uint64_t seed);

  /// Logits (sequences * steps) x K; row t predicts code t.
  Var logits(num::Tape& tape, std::span<const std::int32_t> codes, std::span<const repr::Emotion> emotions,
             std::size_t steps);
  /// Samples `length` codes, recomputing the prefix at every step.
  std::vector<std::int32_t> sample(repr::Emotion emotion, std::size_t length, num::Rng& rng,
                                   double temperature = 1.0);

  void collect(num::ParamList& out);
  [[nodiscard]] const PriorConfig& config() const { return config_; }

 private:
  PriorConfig config_;
  num::Embedding codes_;
  num::Embedding emotions_;
  num::TransformerStack stack_;
  num::Linear head_;
  num::Tensor positions_;
};

struct PriorCorpus {
  std::vector<std::vector<std::int32_t>> codes;  // each of length N
  std::vector<repr::Emotion> emotions;
};

struct PriorTrainOptions {
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  num::Precision precision = num::Precision::f64;
};

struct PriorTrainReport {
  std::vector<double> losses;
  double initial_loss = 0.0;
  double final_accuracy = 0.0;
  std::size_t skipped_steps = 0;
};

/// Cross-entropy loss of the corpus sequences at `indices`.
Var prior_loss(PriorModel& prior, num::Tape& tape, const PriorCorpus& corpus, std::span<const std::size_t> indices);
double prior_accuracy(PriorModel& prior, const PriorCorpus& corpus);
PriorTrainReport train_prior(PriorModel& prior, const PriorCorpus& corpus, const PriorTrainOptions& options);

}  // namespace muser::pipeline
