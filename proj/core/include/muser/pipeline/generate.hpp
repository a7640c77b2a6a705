#pragma once

#include <optional>
#include <span>
#include <vector>

#include "muser/decode/sampling.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/prior.hpp"

namespace muser::pipeline {

/// Autoregressive decoding conditioned on a fixed latent (N_max x L).
/// `first` (typically the emotion token) is kept as step 0 when given.
/// Stops after EOS; an EOS is forced at step max_len - 1.
repr::CpSequence decode_sequence(MuserModel& model, const Tensor& z_q, std::optional<repr::CpToken> first,
                                 std::size_t max_len, const decode::SamplingPolicy& policy, num::Rng& rng);

struct GenerateOptions {
  repr::Emotion emotion = repr::Emotion::q1;
  std::size_t max_len = 0;  // 0 means N_max
  std::uint64_t seed = 0;
  decode::SamplingPolicy policy = decode::SamplingPolicy::paper();
  double prior_temperature = 1.0;
};

struct Generated {
  repr::CpSequence sequence;
  std::vector<std::int32_t> codes;
};

/// Prior samples codes under Emb(o), codebook lookup gives z_q, the decoder
/// produces tokens. Throws when prior and model disagree on K or N_max.
Generated generate(MuserModel& model, PriorModel& prior, const GenerateOptions& options);

/// z_AB: bands listed in `transfer` from B, the rest from A.
Tensor assemble_transfer(const Tensor& z_a, const Tensor& z_b, std::span<const repr::TokenType> transfer,
                         const med::ElementSlicing& slicing);

struct TransferOptions {
  std::size_t max_len = 0;  // 0 means N_max
  std::uint64_t seed = 0;
  decode::SamplingPolicy policy = decode::SamplingPolicy::paper();
};

struct TransferResult {
  repr::CpSequence sequence;
  Tensor z_a, z_b, z_ab;
  std::size_t length_a = 0, length_b = 0;
  /// Steps of the shorter piece filled by codes of its EOS padding.
  std::size_t padded_steps = 0;
  /// Per element: 'A' or 'B'.
  std::array<char, repr::kElementCount> provenance{};
};

TransferResult element_transfer(MuserModel& model, const repr::CpSequence& a, const repr::CpSequence& b,
                                std::span<const repr::TokenType> transfer, const TransferOptions& options);

}  // namespace muser::pipeline
