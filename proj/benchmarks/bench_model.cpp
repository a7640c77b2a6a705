#include <benchmark/benchmark.h>

#include "muser/pipeline/config.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/synthetic.hpp"
#include "muser/pipeline/trainer.hpp"

using namespace muser;

namespace {

// One optimizer step of the desk preset on m=8 synthetic pieces.
void BM_TrainStep(benchmark::State& state) {
  const auto bars = static_cast<std::size_t>(state.range(0));
  auto cfg = pipeline::TrainConfig::desk();
  cfg.model.max_len = pipeline::synthetic_max_length(bars);
  if (state.range(1) != 0) cfg.precision = num::Precision::f32;
  cfg.validate();
  pipeline::MuserModel model(cfg.model, 1);
  std::vector<repr::CpSequence> corpus;
  for (auto& p : pipeline::synthetic_corpus(model.vocab(), {.count = 8, .bars = bars, .seed = 2}))
    corpus.push_back(p.sequence);
  pipeline::Trainer trainer(model, cfg);
  const auto batch = model.make_batch(std::span<const repr::CpSequence>(corpus));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.train_step(batch).loss.total);
  state.counters["N"] = static_cast<double>(cfg.model.max_len);
}
BENCHMARK(BM_TrainStep)->ArgsProduct({{2, 8}, {0, 1}})->ArgNames({"bars", "f32"})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
