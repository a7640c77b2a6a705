#include "muser/numerics/nn.hpp"

#include <cmath>
#include <numbers>

#include "muser/error.hpp"

namespace muser::num {

double normal(Rng& rng) {
  // Box-Muller on the portable uniform source.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng) {
  Tensor t({in, out});
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * a;
  return t;
}

Tensor normal_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = stddev * normal(rng);
  return t;
}

Tensor sinusoidal_positions(std::size_t rows, std::size_t width) {
  Tensor t({rows, width});
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      const double angle = static_cast<double>(p) * rate;
      t.at(p, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return t;
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(name + ".weight", xavier_uniform(in, out, rng)),
      bias(name + ".bias", Tensor({1, out})),
      has_bias(with_bias) {}

Var Linear::operator()(Var x) {
  Tape& t = x.tape();
  Var y = matmul(x, t.param(weight));
  return has_bias ? add(y, t.param(bias)) : y;
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  if (has_bias) out.push_back(&bias);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t width)
    : gain(name + ".gain", Tensor({1, width}, 1.0)), bias(name + ".bias", Tensor({1, width})) {}

Var LayerNorm::operator()(Var x) {
  Tape& t = x.tape();
  return layer_norm(x, t.param(gain), t.param(bias));
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&bias);
}

Embedding::Embedding(const std::string& name, std::size_t count, std::size_t width, Rng& rng)
    : table(name + ".table", normal_tensor({count, width}, 1.0 / std::sqrt(static_cast<double>(width)), rng)) {}

Var Embedding::operator()(Tape& tape, std::span<const std::int32_t> indices) {
  return embedding(tape.param(table), indices);
}

void Embedding::collect(ParamList& out) { out.push_back(&table); }

AttentionLayer::AttentionLayer(const std::string& name, std::size_t width, std::size_t heads_, Rng& rng)
    : query(name + ".query", width, width, rng),
      key(name + ".key", width, width, rng),
      value(name + ".value", width, width, rng),
      output(name + ".output", width, width, rng),
      heads(heads_) {
  if (heads == 0 || width % heads != 0) throw UsageError("attention: width not divisible by heads");
}

Var AttentionLayer::operator()(Var x, std::size_t segment, bool causal, std::optional<Var> memory,
                               std::size_t memory_segment) {
  const Var source = memory.value_or(x);
  LinearAttentionOptions opt;
  opt.heads = heads;
  opt.causal = causal;
  opt.q_segment = segment;
  opt.kv_segment = memory ? memory_segment : segment;
  return output(linear_attention(query(x), key(source), value(source), opt));
}

void AttentionLayer::collect(ParamList& out) {
  query.collect(out);
  key.collect(out);
  value.collect(out);
  output.collect(out);
}

TransformerBlock::TransformerBlock(const std::string& name, const TransformerShape& shape, bool with_cross,
                                   Rng& rng)
    : norm_self(name + ".norm_self", shape.width),
      norm_ff(name + ".norm_ff", shape.width),
      self_attention(name + ".self_attention", shape.width, shape.heads, rng),
      ff_in(name + ".ff_in", shape.width, shape.ff_width, rng),
      ff_out(name + ".ff_out", shape.ff_width, shape.width, rng),
      has_cross(with_cross) {
  if (with_cross) {
    norm_cross = LayerNorm(name + ".norm_cross", shape.width);
    cross_attention = AttentionLayer(name + ".cross_attention", shape.width, shape.heads, rng);
  }
}

void TransformerBlock::collect(ParamList& out) {
  norm_self.collect(out);
  self_attention.collect(out);
  if (has_cross) {
    norm_cross.collect(out);
    cross_attention.collect(out);
  }
  norm_ff.collect(out);
  ff_in.collect(out);
  ff_out.collect(out);
}

TransformerStack::TransformerStack(const std::string& name, const TransformerShape& shape_, bool with_cross,
                                   Rng& rng)
    : final_norm(name + ".final_norm", shape_.width), shape(shape_) {
  for (std::size_t i = 0; i < shape.layers; ++i) {
    blocks.emplace_back(name + ".blocks." + std::to_string(i), shape, with_cross, rng);
  }
}

Var TransformerStack::operator()(Var x, const StackContext& ctx) {
  for (auto& b : blocks) {
    x = add(x, dropout(b.self_attention(b.norm_self(x), ctx.segment, ctx.causal), ctx.dropout));
    if (b.has_cross) {
      if (!ctx.memory) throw UsageError("transformer: cross-attention block needs a memory input");
      x = add(x, dropout(b.cross_attention(b.norm_cross(x), ctx.segment, false, ctx.memory, ctx.memory_segment),
                         ctx.dropout));
    }
    x = add(x, dropout(b.ff_out(elu(b.ff_in(b.norm_ff(x)))), ctx.dropout));
  }
  return final_norm(x);
}

void TransformerStack::collect(ParamList& out) {
  for (auto& b : blocks) b.collect(out);
  final_norm.collect(out);
}

}  // namespace muser::num
