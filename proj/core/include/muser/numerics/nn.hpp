#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "muser/numerics/ops.hpp"

namespace muser::num {

using Rng = std::mt19937_64;
using ParamList = std::vector<Parameter*>;

/// Uniform double in [0, 1) built from the top 53 bits, identical on every
/// standard library.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
double normal(Rng& rng);

Tensor xavier_uniform(std::size_t in, std::size_t out, Rng& rng);
Tensor normal_tensor(std::vector<std::size_t> shape, double stddev, Rng& rng);
/// Fixed sinusoidal position table, rows x width.
Tensor sinusoidal_positions(std::size_t rows, std::size_t width);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);
  Var operator()(Var x);
  void collect(ParamList& out);
  [[nodiscard]] std::size_t in_features() const { return weight.value.rows(); }
  [[nodiscard]] std::size_t out_features() const { return weight.value.cols(); }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t width);
  Var operator()(Var x);
  void collect(ParamList& out);
};

struct Embedding {
  Parameter table;

  Embedding() = default;
  Embedding(const std::string& name, std::size_t count, std::size_t width, Rng& rng);
  Var operator()(Tape& tape, std::span<const std::int32_t> indices);
  void collect(ParamList& out);
};

struct AttentionLayer {
  Linear query, key, value, output;
  std::size_t heads = 1;

  AttentionLayer() = default;
  AttentionLayer(const std::string& name, std::size_t width, std::size_t heads, Rng& rng);
  /// Self-attention when `memory` is empty, cross-attention otherwise.
  Var operator()(Var x, std::size_t segment, bool causal, std::optional<Var> memory = std::nullopt,
                 std::size_t memory_segment = 0);
  void collect(ParamList& out);
};

struct TransformerShape {
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t width = 16;
  std::size_t ff_width = 64;
};

/// Pre-norm block: self-attention, optional cross-attention, ELU feed-forward.
struct TransformerBlock {
  LayerNorm norm_self, norm_cross, norm_ff;
  AttentionLayer self_attention, cross_attention;
  Linear ff_in, ff_out;
  bool has_cross = false;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, const TransformerShape& shape, bool with_cross, Rng& rng);
  void collect(ParamList& out);
};

struct StackContext {
  std::size_t segment = 0;
  bool causal = false;
  double dropout = 0.0;
  std::optional<Var> memory;
  std::size_t memory_segment = 0;
};

struct TransformerStack {
  std::vector<TransformerBlock> blocks;
  LayerNorm final_norm;
  TransformerShape shape;

  TransformerStack() = default;
  TransformerStack(const std::string& name, const TransformerShape& shape, bool with_cross, Rng& rng);
  Var operator()(Var x, const StackContext& ctx);
  void collect(ParamList& out);
};

}  // namespace muser::num
