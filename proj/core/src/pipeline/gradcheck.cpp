#include "muser/pipeline/gradcheck.hpp"

#include <algorithm>

#include "muser/error.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/synthetic.hpp"

namespace muser::pipeline {

num::GradCheckResult check_model_gradients(const TrainConfig& config, const ModelGradCheckOptions& options) {
  if (options.batch < 2) throw UsageError("gradcheck: batch must be at least 2");
  ModelConfig mc = config.model;
  mc.max_len = options.max_len;
  mc.dropout = 0.0;
  MuserModel model(mc, options.seed);

  const std::size_t bars = 1;
  if (synthetic_max_length(bars) > options.max_len) {
    throw UsageError("gradcheck: max_len too short for a one-bar piece");
  }
  const auto pieces = synthetic_corpus(model.vocab(), {.count = options.batch, .bars = bars, .seed = options.seed});
  std::vector<repr::CpSequence> seqs;
  for (const auto& p : pieces) seqs.push_back(p.sequence);
  const auto batch = model.make_batch(seqs);

  // Seed the codebook as the first training step does; a fresh codebook
  // maps every row to one code, which puts |tanh R| on its kink at R = 0.
  {
    num::Tape probe(num::TapeOptions{.grad_enabled = false});
    num::Rng rng(options.seed + 3);
    model.codebook.seed_from(model.encoder(probe, batch).value(), rng);
    model.codebook_seeded = true;
  }
  // Freeze z_q - z_e at the starting parameters.
  FrozenQuantization frozen;
  {
    num::Tape tape(num::TapeOptions{.grad_enabled = false});
    auto r = model.forward(tape, batch, {.alpha = config.alpha, .beta = config.beta, .compute_reg = mc.med});
    frozen.z_q = r.quantized.z_q;
    frozen.offset = frozen.z_q;
    const auto& ze = r.z_e.value();
    for (std::size_t i = 0; i < ze.size(); ++i) frozen.offset[i] -= ze[i];
  }
  const ForwardOptions fo{.alpha = config.alpha, .beta = config.beta, .compute_reg = mc.med, .frozen = &frozen};
  // A nonzero regularization weight keeps the DR model inside the check.
  ForwardOptions checked = fo;
  if (checked.alpha == 0.0 && mc.med) checked.alpha = 0.1;
  auto loss = [&](num::Tape& tape) { return model.forward(tape, batch, checked).total; };
  return num::grad_check_params(loss, model.parameters(), options.eps, options.coords_per_param, options.seed + 7);
}

GradCheckReport run_gradcheck(const TrainConfig& config, const ModelGradCheckOptions& options) {
  GradCheckReport report;
  report.primitives = num::check_primitives(options.seed, options.eps);
  for (const auto& p : report.primitives) report.max_rel_error = std::max(report.max_rel_error, p.result.max_rel_error);
  report.model = check_model_gradients(config, options);
  report.max_rel_error = std::max(report.max_rel_error, report.model.max_rel_error);
  return report;
}

}  // namespace muser::pipeline
