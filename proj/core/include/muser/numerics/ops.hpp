#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "muser/numerics/tape.hpp"

namespace muser::num {

// Differentiable primitives. Every function records one tape entry whose
// backward rule is registered under the same name.

Var matmul(Var a, Var b);
/// `b` may match `a`'s shape, be a single row, or tile `a` row-wise
/// (a.rows() a multiple of b.rows()).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

Var tanh(Var a);
Var elu(Var a);
Var abs(Var a);

/// Row-wise normalisation with learned gain and bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var embedding(Var table, std::span<const std::int32_t> indices);
Var softmax(Var x);
/// Weighted mean of per-row negative log-likelihoods. Rows with weight 0
/// are ignored; an all-zero weight vector yields 0.
Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const double> weights = {});

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t width);
Var concat_rows(const std::vector<Var>& parts);
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// Within each block of `segment` rows, row t takes row t-1; row 0 is zero.
Var shift_rows(Var x, std::size_t segment);

Var transpose(Var x);
/// Transposes each consecutive (block_rows x cols) block independently.
Var block_transpose(Var x, std::size_t block_rows);
Var reshape(Var x, std::vector<std::size_t> shape);

Var sum(Var x);
Var mean(Var x);

/// Inverted dropout; identity unless the tape is in training mode.
Var dropout(Var x, double p);

/// Forward value is `quantized`; the downstream gradient flows to `x`
/// unchanged.
Var straight_through(Var x, const Tensor& quantized);
/// out[i, j, t] = z[i, t] - z[j, t] for z of shape m x N.
Var pairwise_diff(Var z);

struct LinearAttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  /// Rows per sequence for queries and keys/values; 0 means one sequence.
  std::size_t q_segment = 0;
  std::size_t kv_segment = 0;
};

/// Kernelised attention with feature map elu(x)+1.
///   out_t = phi(q_t)^T S_t / max(phi(q_t)^T z_t, 1e-8),
/// S_t = sum_s phi(k_s) v_s^T, z_t = sum_s phi(k_s), with s <= t when causal.
Var linear_attention(Var q, Var k, Var v, const LinearAttentionOptions& options);
inline Var linear_attention(Var q, Var k, Var v, bool causal) {
  return linear_attention(q, k, v, LinearAttentionOptions{.causal = causal});
}

inline constexpr double kAttentionDenominatorFloor = 1e-8;

/// Ensures the primitive names are in the registry. Called implicitly by
/// every primitive; exposed for tests that inspect the registry.
void register_builtin_primitives();

}  // namespace muser::num
