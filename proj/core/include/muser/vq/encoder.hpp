#pragma once

#include <array>
#include <string>

#include "muser/numerics/nn.hpp"
#include "muser/repr/batch.hpp"

namespace muser::vq {

struct EncoderConfig {
  std::array<std::size_t, repr::kTokenTypes> vocab_sizes{};
  std::array<std::size_t, repr::kTokenTypes> embed_sizes{};
  num::TransformerShape shape;
  std::size_t latent_width = 28;
  std::size_t max_len = 256;
  double dropout = 0.0;
};

/// z_e = Enc(x): per-type embeddings concatenated per step, projected to the
/// hidden width, plus sinusoidal positions, through a non-causal stack and
/// projected to the latent width.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& name, const EncoderConfig& config, num::Rng& rng);

  /// (sequences * length) x latent_width.
  num::Var operator()(num::Tape& tape, const repr::TokenBatch& batch);
  void collect(num::ParamList& out);
  [[nodiscard]] const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::array<num::Embedding, repr::kTokenTypes> embeddings_;
  num::Linear input_;
  num::TransformerStack stack_;
  num::Linear output_;
  num::Tensor positions_;
};

/// Concatenated per-type embeddings of a batch, one row per step.
num::Var embed_tokens(num::Tape& tape, std::array<num::Embedding, repr::kTokenTypes>& tables,
                      const repr::TokenBatch& batch);
/// The first `length` rows of `table` tiled over every sequence of the batch.
num::Var positions_for(num::Tape& tape, const num::Tensor& table, std::size_t length);

}  // namespace muser::vq
