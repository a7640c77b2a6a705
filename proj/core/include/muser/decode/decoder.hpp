#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "muser/decode/sampling.hpp"
#include "muser/numerics/nn.hpp"
#include "muser/repr/batch.hpp"

namespace muser::decode {

using num::Var;

enum class CondMode { cross_attention, concat };
enum class DecoderLayout { global_and_element, global_only, element_only };

std::string_view cond_mode_name(CondMode m);
std::optional<CondMode> parse_cond_mode(std::string_view s);
std::string_view layout_name(DecoderLayout d);
std::optional<DecoderLayout> parse_layout(std::string_view s);

struct DecoderConfig {
  std::array<std::size_t, repr::kTokenTypes> vocab_sizes{};
  std::array<std::size_t, repr::kTokenTypes> embed_sizes{};
  num::TransformerShape global;
  num::TransformerShape element;
  std::size_t slice_width = 4;
  std::size_t max_len = 256;
  CondMode cond = CondMode::cross_attention;
  DecoderLayout layout = DecoderLayout::global_and_element;
  double dropout = 0.0;

  [[nodiscard]] std::size_t latent_width() const { return slice_width * repr::kElementCount; }
};

/// Rows [0, steps) of every sequence of a (sequences * rows_per_seq) matrix.
Var leading_rows(Var x, std::size_t sequences, std::size_t rows_per_seq, std::size_t steps);

/// Global decoder Dec_G over the step-shifted token stream, conditioned on
/// z_q, feeding seven element decoders Dec_e(h + Linear(z_q^e) + Emb(family)).
/// The family decoder receives no family embedding; it is stage one.
class TwoLevelDecoder {
 public:
  TwoLevelDecoder() = default;
  TwoLevelDecoder(const std::string& name, const DecoderConfig& config, num::Rng& rng);

  /// h for steps [0, tokens.length) of each sequence. Row t sees tokens
  /// < t and the whole latent (latent_len rows per sequence).
  Var decode_global(num::Tape& tape, const repr::TokenBatch& tokens, Var z_q, std::size_t latent_len);
  /// Logits over vocab(element) per step. `h` is (sequences * steps) x
  /// hidden, `band` the aligned (sequences * steps) x l latent slice.
  /// `family` holds the conditioning family per step (ignored for the
  /// family element).
  Var decode_element(repr::TokenType element, Var h, Var band, std::span<const std::int32_t> family,
                     std::size_t steps);
  /// Teacher-forced logits for all seven elements.
  std::array<Var, repr::kElementCount> forward(num::Tape& tape, const repr::TokenBatch& tokens, Var z_q,
                                               std::size_t latent_len);

  void collect(num::ParamList& out);
  [[nodiscard]] const DecoderConfig& config() const { return config_; }

 private:
  struct ElementBranch {
    num::Linear latent;
    num::Embedding family;
    num::TransformerStack stack;
    num::Linear head;
  };

  Var token_stream(num::Tape& tape, const repr::TokenBatch& tokens);

  DecoderConfig config_;
  std::array<num::Embedding, repr::kTokenTypes> embeddings_;
  num::Linear input_;
  num::Linear latent_;
  num::Linear merge_;  // concat mode
  num::TransformerStack global_;
  num::Linear bridge_;  // when global and element widths differ
  bool has_bridge_ = false;
  std::array<ElementBranch, repr::kElementCount> branches_;
  std::array<num::Linear, repr::kElementCount> global_heads_;
  num::Tensor positions_;
};

/// Predicts the token at the last of `steps` positions (one sequence).
/// Stage one samples the family from the family decoder; stage two runs
/// the other six decoders conditioned on it. Fields inactive for the
/// family are left empty, required fields (bar/beat for metric, pitch,
/// duration and velocity for note) never sample the empty index, and the
/// emotion family is never sampled. `family` must hold `steps` entries;
/// its last entry is overwritten with the sampled family.
repr::CpToken two_stage_step(TwoLevelDecoder& decoder, Var h, Var z_q_aligned, std::vector<std::int32_t>& family,
                             std::size_t steps, const SamplingPolicy& policy, num::Rng& rng);

}  // namespace muser::decode
