#include <algorithm>

#include "muser/numerics/grad_check.hpp"

namespace muser::num {

namespace {

// Scalar probe: sum(out * W) for a fixed random W of the output's shape.
class Reducer {
 public:
  explicit Reducer(std::uint64_t seed) : seed_(seed) {}
  Var operator()(Var out) const {
    Rng rng(seed_);
    Tensor w = normal_tensor(out.value().shape(), 1.0, rng);
    return sum(mul(out, out.tape().constant(std::move(w))));
  }

 private:
  std::uint64_t seed_;
};

}  // namespace

std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed, double eps) {
  Rng rng(seed);
  auto rand = [&](std::size_t r, std::size_t c) { return normal_tensor({r, c}, 1.0, rng); };
  const Reducer reduce(seed + 1);
  std::vector<PrimitiveCheck> out;
  auto check = [&](const std::string& name, const ScalarFn& f, const Tensor& x, TapeOptions opts = {}) {
    out.push_back({name, grad_check(f, x, eps, opts, seed + 2)});
  };
  auto keep = [&](const std::string& name, const GradCheckResult& r) {
    // Several inputs of one primitive fold into its worst case.
    for (auto& p : out) {
      if (p.primitive == name) {
        if (r.max_rel_error > p.result.max_rel_error) p.result = r;
        else p.result.coordinates += r.coordinates;
        return;
      }
    }
    out.push_back({name, r});
  };

  const Tensor A = rand(3, 4), B = rand(4, 2), C = rand(3, 4), row = rand(1, 4);
  keep("matmul", grad_check([&](Var a) { return reduce(matmul(a, a.tape().constant(B))); }, A, eps));
  keep("matmul", grad_check([&](Var b) { return reduce(matmul(b.tape().constant(A), b)); }, B, eps));
  keep("add", grad_check([&](Var a) { return reduce(add(a, a.tape().constant(C))); }, A, eps));
  keep("add", grad_check([&](Var r) { return reduce(add(r.tape().constant(A), r)); }, row, eps));
  keep("sub", grad_check([&](Var a) { return reduce(sub(a.tape().constant(C), a)); }, A, eps));
  keep("mul", grad_check([&](Var a) { return reduce(mul(a, a.tape().constant(C))); }, A, eps));
  check("scale", [&](Var a) { return reduce(scale(a, -1.7)); }, A);
  check("tanh", [&](Var a) { return reduce(tanh(a)); }, A);
  check("elu", [&](Var a) { return reduce(elu(a)); }, A);
  {
    // Keep probes away from the kink at zero.
    Tensor x = A;
    for (double& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
    check("abs", [&](Var a) { return reduce(abs(a)); }, x);
  }
  const Tensor gain = rand(1, 4), bias = rand(1, 4);
  keep("layer_norm", grad_check([&](Var x) {
         return reduce(layer_norm(x, x.tape().constant(gain), x.tape().constant(bias)));
       }, A, eps));
  keep("layer_norm", grad_check([&](Var g) {
         return reduce(layer_norm(g.tape().constant(A), g, g.tape().constant(bias)));
       }, gain, eps));
  keep("layer_norm", grad_check([&](Var b) {
         return reduce(layer_norm(b.tape().constant(A), b.tape().constant(gain), b));
       }, bias, eps));
  const std::vector<std::int32_t> idx = {2, 0, 2, 1};
  check("embedding", [&](Var t) { return reduce(embedding(t, idx)); }, rand(3, 5));
  check("softmax", [&](Var a) { return reduce(softmax(a)); }, A);
  {
    const std::vector<std::int32_t> tgt = {1, 3, 0};
    const std::vector<double> w = {1.0, 0.5, 2.0};
    check("cross_entropy", [&](Var a) { return cross_entropy(a, tgt, w); }, A);
  }
  keep("concat_cols", grad_check([&](Var a) { return reduce(concat_cols({a, a.tape().constant(C)})); }, A, eps));
  check("slice_cols", [&](Var a) { return reduce(slice_cols(a, 1, 2)); }, A);
  keep("concat_rows", grad_check([&](Var a) { return reduce(concat_rows({a.tape().constant(C), a})); }, A, eps));
  {
    const std::vector<std::size_t> rows = {2, 0, 2};
    check("gather_rows", [&](Var a) { return reduce(gather_rows(a, rows)); }, A);
  }
  check("shift_rows", [&](Var a) { return reduce(shift_rows(a, 2)); }, rand(4, 3));
  check("transpose", [&](Var a) { return reduce(transpose(a)); }, A);
  check("block_transpose", [&](Var a) { return reduce(block_transpose(a, 2)); }, rand(4, 3));
  check("reshape", [&](Var a) { return reduce(reshape(a, {2, 6})); }, A);
  check("sum", [&](Var a) { return scale(sum(a), 0.5); }, A);
  check("mean", [&](Var a) { return scale(mean(a), 3.0); }, A);
  check("dropout", [&](Var a) { return reduce(dropout(a, 0.3)); }, A, TapeOptions{.training = true});
  {
    // Quantization frozen: q tracks the input at a fixed offset, so the
    // forward map is x + offset and the identity gradient is exact.
    const Tensor offset = rand(3, 4);
    check("straight_through", [&](Var a) {
      Tensor q = a.value();
      for (std::size_t i = 0; i < q.size(); ++i) q[i] += offset[i];
      return reduce(straight_through(a, q));
    }, A);
  }
  check("pairwise_diff", [&](Var a) { return reduce(pairwise_diff(a)); }, A);

  const Tensor Q = rand(6, 4), K = rand(6, 4), V = rand(6, 4), M = rand(4, 4), W = rand(4, 4);
  for (bool causal : {true, false}) {
    const LinearAttentionOptions o{.heads = 2, .causal = causal, .q_segment = 3, .kv_segment = 3};
    keep("linear_attention", grad_check([&](Var q) {
           return reduce(linear_attention(q, q.tape().constant(K), q.tape().constant(V), o));
         }, Q, eps));
    keep("linear_attention", grad_check([&](Var k) {
           return reduce(linear_attention(k.tape().constant(Q), k, k.tape().constant(V), o));
         }, K, eps));
    keep("linear_attention", grad_check([&](Var v) {
           return reduce(linear_attention(v.tape().constant(Q), v.tape().constant(K), v, o));
         }, V, eps));
  }
  {
    // Cross-attention with different query and key/value segment lengths.
    const LinearAttentionOptions o{.heads = 2, .causal = false, .q_segment = 3, .kv_segment = 2};
    keep("linear_attention", grad_check([&](Var k) {
           return reduce(linear_attention(k.tape().constant(Q), k, k.tape().constant(M), o));
         }, W, eps));
  }
  return out;
}

}  // namespace muser::num
