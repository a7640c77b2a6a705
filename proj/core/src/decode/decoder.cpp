#include "muser/decode/decoder.hpp"

#include <cmath>

#include "muser/error.hpp"
#include "muser/vq/encoder.hpp"

namespace muser::decode {

using repr::TokenType;

std::string_view cond_mode_name(CondMode m) { return m == CondMode::cross_attention ? "cross_attention" : "concat"; }

std::optional<CondMode> parse_cond_mode(std::string_view s) {
  if (s == "cross_attention" || s == "ca") return CondMode::cross_attention;
  if (s == "concat") return CondMode::concat;
  return std::nullopt;
}

std::string_view layout_name(DecoderLayout d) {
  switch (d) {
    case DecoderLayout::global_and_element: return "global+element";
    case DecoderLayout::global_only: return "global_only";
    case DecoderLayout::element_only: return "element_only";
  }
  return "global+element";
}

std::optional<DecoderLayout> parse_layout(std::string_view s) {
  if (s == "global+element") return DecoderLayout::global_and_element;
  if (s == "global_only") return DecoderLayout::global_only;
  if (s == "element_only") return DecoderLayout::element_only;
  return std::nullopt;
}

Var leading_rows(Var x, std::size_t sequences, std::size_t rows_per_seq, std::size_t steps) {
  if (steps == rows_per_seq) return x;
  if (steps > rows_per_seq) throw UsageError("leading_rows: more steps than rows");
  std::vector<std::size_t> rows;
  rows.reserve(sequences * steps);
  for (std::size_t s = 0; s < sequences; ++s)
    for (std::size_t t = 0; t < steps; ++t) rows.push_back(s * rows_per_seq + t);
  return num::gather_rows(x, rows);
}

TwoLevelDecoder::TwoLevelDecoder(const std::string& name, const DecoderConfig& config, num::Rng& rng)
    : config_(config) {
  const std::size_t H = config.global.width;
  const std::size_t HE = config.element.width;
  const std::size_t L = config.latent_width();
  std::size_t total = 0;
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) {
    embeddings_[k] = num::Embedding(name + ".embed." + std::string(repr::short_name(repr::kAllTypes[k])),
                                    config.vocab_sizes[k], config.embed_sizes[k], rng);
    total += config.embed_sizes[k];
  }
  const bool element_only = config.layout == DecoderLayout::element_only;
  const std::size_t stream_width = element_only ? HE : H;
  input_ = num::Linear(name + ".input", total, stream_width, rng);
  positions_ = num::sinusoidal_positions(config.max_len, stream_width);

  if (!element_only) {
    latent_ = num::Linear(name + ".latent", L, H, rng);
    if (config.cond == CondMode::concat) merge_ = num::Linear(name + ".merge", 2 * H, H, rng);
    global_ = num::TransformerStack(name + ".global", config.global, config.cond == CondMode::cross_attention, rng);
  }
  if (config.layout == DecoderLayout::global_only) {
    for (std::size_t e = 0; e < repr::kElementCount; ++e) {
      global_heads_[e] = num::Linear(name + ".head." + std::string(repr::short_name(repr::kElements[e])), H,
                                     config.vocab_sizes[e], rng);
    }
    return;
  }
  if (!element_only && H != HE) {
    bridge_ = num::Linear(name + ".bridge", H, HE, rng);
    has_bridge_ = true;
  }
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    const std::string p = name + ".element." + std::string(repr::short_name(repr::kElements[e]));
    auto& b = branches_[e];
    b.latent = num::Linear(p + ".latent", config.slice_width, HE, rng);
    if (e != 0) b.family = num::Embedding(p + ".family", config.vocab_sizes[0], HE, rng);
    b.stack = num::TransformerStack(p + ".stack", config.element, false, rng);
    b.head = num::Linear(p + ".head", HE, config.vocab_sizes[e], rng);
  }
}

Var TwoLevelDecoder::token_stream(num::Tape& tape, const repr::TokenBatch& tokens) {
  if (tokens.length > config_.max_len) throw DataError("decode: sequence longer than N_max");
  Var x = num::shift_rows(input_(vq::embed_tokens(tape, embeddings_, tokens)), tokens.length);
  x = num::add(x, vq::positions_for(tape, positions_, tokens.length));
  return num::dropout(x, config_.dropout);
}

Var TwoLevelDecoder::decode_global(num::Tape& tape, const repr::TokenBatch& tokens, Var z_q, std::size_t latent_len) {
  if (z_q.cols() != config_.latent_width()) throw UsageError("decode_global: latent width mismatch");
  if (z_q.rows() != tokens.sequences * latent_len) throw UsageError("decode_global: latent rows mismatch");
  if (latent_len < tokens.length) throw UsageError("decode_global: latent length differs from token length");
  Var x = token_stream(tape, tokens);
  if (config_.layout == DecoderLayout::element_only) return x;
  num::StackContext ctx;
  ctx.segment = tokens.length;
  ctx.causal = true;
  ctx.dropout = config_.dropout;
  if (config_.cond == CondMode::cross_attention) {
    ctx.memory = latent_(z_q);
    ctx.memory_segment = latent_len;
  } else {
    const Var zq = latent_(leading_rows(z_q, tokens.sequences, latent_len, tokens.length));
    x = merge_(num::concat_cols({x, zq}));
  }
  return global_(x, ctx);
}

Var TwoLevelDecoder::decode_element(TokenType element, Var h, Var band, std::span<const std::int32_t> family,
                                    std::size_t steps) {
  if (element == TokenType::emotion) throw UsageError("decode_element: emotion is never predicted");
  const std::size_t e = repr::index_of(element);
  if (config_.layout == DecoderLayout::global_only) return global_heads_[e](h);
  auto& b = branches_[e];
  Var x = has_bridge_ ? bridge_(h) : h;
  x = num::add(x, b.latent(band));
  if (element != TokenType::family) {
    if (family.size() != x.rows()) throw UsageError("decode_element: family context length mismatch");
    x = num::add(x, b.family(h.tape(), family));
  }
  num::StackContext ctx;
  ctx.segment = steps;
  ctx.causal = true;
  ctx.dropout = config_.dropout;
  return b.head(b.stack(x, ctx));
}

std::array<Var, repr::kElementCount> TwoLevelDecoder::forward(num::Tape& tape, const repr::TokenBatch& tokens,
                                                              Var z_q, std::size_t latent_len) {
  const Var h = decode_global(tape, tokens, z_q, latent_len);
  const Var zq = leading_rows(z_q, tokens.sequences, latent_len, tokens.length);
  std::array<Var, repr::kElementCount> out;
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    const Var band = num::slice_cols(zq, e * config_.slice_width, config_.slice_width);
    out[e] = decode_element(repr::kElements[e], h, band, tokens.field(TokenType::family), tokens.length);
  }
  return out;
}

void TwoLevelDecoder::collect(num::ParamList& out) {
  for (auto& e : embeddings_) e.collect(out);
  input_.collect(out);
  if (config_.layout != DecoderLayout::element_only) {
    latent_.collect(out);
    if (config_.cond == CondMode::concat) merge_.collect(out);
    global_.collect(out);
  }
  if (config_.layout == DecoderLayout::global_only) {
    for (auto& h : global_heads_) h.collect(out);
    return;
  }
  if (has_bridge_) bridge_.collect(out);
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    auto& b = branches_[e];
    b.latent.collect(out);
    if (e != 0) b.family.collect(out);
    b.stack.collect(out);
    b.head.collect(out);
  }
}

namespace {

std::vector<double> last_row(const num::Tensor& logits) {
  const auto r = logits.row(logits.rows() - 1);
  return {r.begin(), r.end()};
}

bool required(repr::Family f, TokenType t) {
  if (f == repr::Family::metric) return t == TokenType::bar_beat;
  if (f == repr::Family::note) return true;
  return false;
}

}  // namespace

repr::CpToken two_stage_step(TwoLevelDecoder& decoder, Var h, Var z_q_aligned, std::vector<std::int32_t>& family,
                             std::size_t steps, const SamplingPolicy& policy, num::Rng& rng) {
  if (family.size() != steps || steps == 0) throw UsageError("two_stage_step: family context length mismatch");
  const std::size_t l = decoder.config().slice_width;
  auto band = [&](std::size_t e) { return num::slice_cols(z_q_aligned, e * l, l); };

  repr::CpToken token;
  auto fl = last_row(decoder.decode_element(TokenType::family, h, band(0), family, steps).value());
  fl[static_cast<std::size_t>(repr::Family::emotion)] = -INFINITY;
  const auto& fr = policy[TokenType::family];
  const std::int32_t f = sample_token(fl, fr.temperature, fr.nucleus, rng);
  token[TokenType::family] = f;
  family.back() = f;
  const auto fam = static_cast<repr::Family>(f);
  if (fam == repr::Family::eos) return token;

  for (std::size_t e = 1; e < repr::kElementCount; ++e) {
    const TokenType t = repr::kElements[e];
    if (!repr::is_active(fam, t)) continue;
    auto logits = last_row(decoder.decode_element(t, h, band(e), family, steps).value());
    if (required(fam, t)) logits[repr::kEmpty] = -INFINITY;
    const auto& r = policy[t];
    token[t] = sample_token(logits, r.temperature, r.nucleus, rng);
  }
  return token;
}

}  // namespace muser::decode
