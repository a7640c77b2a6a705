#include "muser/pipeline/generate.hpp"

#include <algorithm>

#include "muser/error.hpp"

namespace muser::pipeline {

using repr::TokenType;

repr::CpSequence decode_sequence(MuserModel& model, const Tensor& z_q, std::optional<repr::CpToken> first,
                                 std::size_t max_len, const decode::SamplingPolicy& policy, num::Rng& rng) {
  const std::size_t N = model.config().max_len;
  if (z_q.rows() != N || z_q.cols() != model.config().latent_width()) {
    throw UsageError("decode: latent must be N_max x L");
  }
  if (max_len == 0) max_len = N;
  if (max_len > N || max_len < 2) throw UsageError("decode: max_len must lie in [2, N_max]");
  policy.validate();

  repr::CpSequence seq;
  if (first) {
    seq.tokens.push_back(*first);
    if (first->family() == repr::Family::emotion) seq.emotion = static_cast<repr::Emotion>((*first)[TokenType::emotion]);
  }
  while (seq.tokens.empty() || seq.tokens.back().family() != repr::Family::eos) {
    const std::size_t t = seq.tokens.size();
    if (t + 1 >= max_len) {
      seq.tokens.push_back(repr::eos_token());
      break;
    }
    std::vector<repr::CpToken> rows = seq.tokens;
    rows.push_back(repr::CpToken{});  // step t itself is never read by the shifted stream
    repr::CpSequence prefix{rows, seq.emotion};
    const auto batch = repr::make_batch(std::span<const repr::CpSequence>(&prefix, 1), t + 1);

    num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false});
    const Var zq = tape.constant(z_q);
    const Var h = model.decoder.decode_global(tape, batch, zq, N);
    const Var aligned = decode::leading_rows(zq, 1, N, t + 1);
    std::vector<std::int32_t> family(batch.field(TokenType::family).begin(), batch.field(TokenType::family).end());
    seq.tokens.push_back(decode::two_stage_step(model.decoder, h, aligned, family, t + 1, policy, rng));
  }
  return seq;
}

Generated generate(MuserModel& model, PriorModel& prior, const GenerateOptions& options) {
  const auto& mc = model.config();
  if (prior.config().codebook_size != mc.codebook_size) {
    throw UsageError("generate: prior codebook size differs from the model's");
  }
  if (prior.config().max_len != mc.max_len) throw UsageError("generate: prior N_max differs from the model's");
  if (options.emotion == repr::Emotion::none) throw UsageError("generate: an emotion quadrant is required");
  num::Rng rng(options.seed);
  Generated g;
  g.codes = prior.sample(options.emotion, mc.max_len, rng, options.prior_temperature);
  const Tensor z_q = vq::lookup(model.codebook, g.codes);
  g.sequence = decode_sequence(model, z_q, repr::emotion_token(options.emotion), options.max_len, options.policy, rng);
  return g;
}

Tensor assemble_transfer(const Tensor& z_a, const Tensor& z_b, std::span<const TokenType> transfer,
                         const med::ElementSlicing& slicing) {
  if (!z_a.same_shape(z_b) || z_a.cols() != slicing.total()) throw UsageError("transfer: latent shapes differ");
  Tensor out = z_a;
  for (auto e : transfer) {
    const std::size_t b = slicing.begin(e);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < slicing.width; ++c) out.at(r, b + c) = z_b.at(r, b + c);
    }
  }
  return out;
}

TransferResult element_transfer(MuserModel& model, const repr::CpSequence& a, const repr::CpSequence& b,
                                std::span<const TokenType> transfer, const TransferOptions& options) {
  for (auto e : transfer) {
    if (e == TokenType::emotion) throw UsageError("transfer: emotion is not an element");
  }
  TransferResult r;
  r.z_a = model.encode(model.make_batch(std::span<const repr::CpSequence>(&a, 1))).z_q;
  r.z_b = model.encode(model.make_batch(std::span<const repr::CpSequence>(&b, 1))).z_q;
  r.length_a = a.size();
  r.length_b = b.size();
  r.padded_steps = r.length_a > r.length_b ? r.length_a - r.length_b : r.length_b - r.length_a;
  r.z_ab = assemble_transfer(r.z_a, r.z_b, transfer, model.slicing());
  r.provenance.fill('A');
  for (auto e : transfer) r.provenance[repr::index_of(e)] = 'B';
  num::Rng rng(options.seed);
  std::optional<repr::CpToken> first;
  if (!a.tokens.empty() && a.tokens[0].family() == repr::Family::emotion) first = a.tokens[0];
  r.sequence = decode_sequence(model, r.z_ab, first, options.max_len, options.policy, rng);
  return r;
}

}  // namespace muser::pipeline
