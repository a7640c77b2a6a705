#include "muser/vq/encoder.hpp"

#include "muser/error.hpp"

namespace muser::vq {

using num::Var;

Var embed_tokens(num::Tape& tape, std::array<num::Embedding, repr::kTokenTypes>& tables,
                 const repr::TokenBatch& batch) {
  std::vector<Var> parts;
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) parts.push_back(tables[k](tape, batch.fields[k]));
  return num::concat_cols(parts);
}

Var positions_for(num::Tape& tape, const num::Tensor& table, std::size_t length) {
  if (length > table.rows()) throw DataError("sequence length exceeds the configured maximum");
  num::Tensor pos({length, table.cols()});
  std::copy(table.data(), table.data() + pos.size(), pos.data());
  return tape.constant(std::move(pos));
}

Encoder::Encoder(const std::string& name, const EncoderConfig& config, num::Rng& rng) : config_(config) {
  std::size_t total = 0;
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) {
    embeddings_[k] = num::Embedding(name + ".embed." + std::string(repr::short_name(repr::kAllTypes[k])),
                                    config.vocab_sizes[k], config.embed_sizes[k], rng);
    total += config.embed_sizes[k];
  }
  input_ = num::Linear(name + ".input", total, config.shape.width, rng);
  stack_ = num::TransformerStack(name + ".stack", config.shape, false, rng);
  output_ = num::Linear(name + ".output", config.shape.width, config.latent_width, rng);
  positions_ = num::sinusoidal_positions(config.max_len, config.shape.width);
}

Var Encoder::operator()(num::Tape& tape, const repr::TokenBatch& batch) {
  if (batch.length > config_.max_len) throw DataError("encode: sequence longer than N_max");
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) {
    for (auto v : batch.fields[k]) {
      if (v < 0 || static_cast<std::size_t>(v) >= config_.vocab_sizes[k]) {
        throw DataError("encode: token index out of vocabulary range");
      }
    }
  }
  Var x = input_(embed_tokens(tape, embeddings_, batch));
  x = num::add(x, positions_for(tape, positions_, batch.length));
  x = num::dropout(x, config_.dropout);
  num::StackContext ctx;
  ctx.segment = batch.length;
  ctx.dropout = config_.dropout;
  x = stack_(x, ctx);
  return output_(x);
}

void Encoder::collect(num::ParamList& out) {
  for (auto& e : embeddings_) e.collect(out);
  input_.collect(out);
  stack_.collect(out);
  output_.collect(out);
}

}  // namespace muser::vq
