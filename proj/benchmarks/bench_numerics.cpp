#include <benchmark/benchmark.h>

#include "muser/numerics/nn.hpp"
#include "muser/numerics/ops.hpp"
#include "muser/numerics/tape.hpp"
#include "muser/vq/codebook.hpp"

using namespace muser;

namespace {

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  num::Rng rng(1);
  const num::Tensor a = num::normal_tensor({n, n}, 1.0, rng), b = num::normal_tensor({n, n}, 1.0, rng);
  for (auto _ : state) {
    num::Tape t(num::TapeOptions{.grad_enabled = false});
    benchmark::DoNotOptimize(num::matmul(t.leaf(a), t.leaf(b)).value().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_LinearAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const bool causal = state.range(1) != 0;
  num::Rng rng(2);
  const num::Tensor q = num::normal_tensor({n, 128}, 1.0, rng), k = num::normal_tensor({n, 128}, 1.0, rng),
                    v = num::normal_tensor({n, 128}, 1.0, rng);
  for (auto _ : state) {
    num::Tape t;
    const auto out = num::linear_attention(t.leaf(q, true), t.leaf(k, true), t.leaf(v, true),
                                           num::LinearAttentionOptions{.heads = 8, .causal = causal});
    t.backward(num::sum(out));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_LinearAttention)->ArgsProduct({{64, 256, 1024}, {0, 1}})->ArgNames({"N", "causal"});

void BM_Quantize(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  num::Rng rng(3);
  const vq::Codebook cb(k, 112, 0.99, 1e-5, rng);
  const num::Tensor z = num::normal_tensor({1024, 112}, 1.0, rng);
  for (auto _ : state) benchmark::DoNotOptimize(vq::quantize(z, cb).codes.data());
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 1024));
}
BENCHMARK(BM_Quantize)->Arg(64)->Arg(512);

}  // namespace
