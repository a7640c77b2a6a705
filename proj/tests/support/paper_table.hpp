#pragma once

#include <string>
#include <vector>

#include "muser/pipeline/config.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::testing {

/// Field-by-field comparison of a config against the published model
/// settings and CP vocabulary table. Returns one message per mismatch.
inline std::vector<std::string> paper_table_mismatches(const pipeline::TrainConfig& c) {
  std::vector<std::string> bad;
  auto expect = [&](const std::string& field, double got, double want) {
    if (got != want) bad.push_back(field + ": got " + std::to_string(got) + ", want " + std::to_string(want));
  };
  const auto& m = c.model;
  struct Row {
    const char* name;
    const num::TransformerShape& shape;
    std::size_t layers, heads, hidden, ff;
  };
  const Row rows[] = {{"encoder", m.encoder, 8, 8, 128, 512},
                      {"global_decoder", m.global_decoder, 4, 8, 256, 1024},
                      {"element_decoder", m.element_decoder, 2, 8, 256, 1024},
                      {"dr", m.dr, 4, 4, 1024, 4096},
                      {"prior", m.prior, 8, 8, 256, 1024}};
  for (const auto& r : rows) {
    const std::string n = r.name;
    expect(n + ".layers", r.shape.layers, r.layers);
    expect(n + ".heads", r.shape.heads, r.heads);
    expect(n + ".width", r.shape.width, r.hidden);
    expect(n + ".ff_width", r.shape.ff_width, r.ff);
  }
  expect("latent_width", m.latent_width(), 112);
  expect("slice_width", m.slice_width, 16);
  expect("batch_size", c.batch_size, 16);
  expect("lr_pretrain", c.lr_pretrain, 1e-4);
  expect("lr_finetune", c.lr_finetune, 1e-5);
  expect("dropout", m.dropout, 0.1);
  expect("alpha", c.alpha, 0.1);
  expect("beta", c.beta, 0.25);
  expect("max_len", m.max_len, 1024);

  struct TypeRow {
    repr::TokenType type;
    std::size_t vocab, embed;
    double tau, rho;
  };
  using T = repr::TokenType;
  const TypeRow types[] = {{T::family, 4, 32, 1.0, 0.90},     {T::bar_beat, 18, 64, 1.2, 1.00},
                           {T::tempo, 56, 128, 1.2, 0.90},    {T::chord, 135, 256, 1.0, 0.99},
                           {T::pitch, 87, 512, 1.0, 0.90},    {T::duration, 18, 128, 2.0, 0.90},
                           {T::velocity, 42, 128, 5.0, 1.00}, {T::emotion, 5, 128, 0.0, 0.0}};
  const auto vocab = repr::Vocabulary::for_preset(m.vocab);
  for (const auto& t : types) {
    const std::string n(repr::long_name(t.type));
    expect(n + ".vocab", vocab.size(t.type), t.vocab);
    expect(n + ".embed", m.embed_sizes[repr::index_of(t.type)], t.embed);
    if (t.type == T::emotion) continue;
    expect(n + ".tau", c.sampling[t.type].temperature, t.tau);
    expect(n + ".rho", c.sampling[t.type].nucleus, t.rho);
  }
  return bad;
}

}  // namespace muser::testing
