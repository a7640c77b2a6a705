#include "muser/pipeline/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "muser/error.hpp"

namespace muser::pipeline {

Trainer::Trainer(MuserModel& model, const TrainConfig& config)
    : model_(model), config_(config), rng_(config.seed ^ 0x9E3779B97F4A7C15ULL) {
  config_.validate();
  // With alpha = 0 the DR model receives no gradient and is left untouched.
  num::ParamList all = model.parameters();
  num::ParamList dr = model.dr_parameters();
  for (auto* p : all) {
    if (config.alpha == 0.0 && std::find(dr.begin(), dr.end(), p) != dr.end()) continue;
    params_.push_back(p);
  }
  adam_.config.clip_norm = config.clip_norm;
}

std::string Trainer::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void Trainer::restore_rng(const std::string& state) {
  if (state.empty()) return;
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw DataError("trainer: corrupt rng state");
}

StepReport Trainer::train_step(const repr::TokenBatch& batch) {
  StepReport rep;
  num::Tape tape(num::TapeOptions{.grad_enabled = true, .training = true, .precision = config_.precision}, rng_());

  if (!model_.codebook_seeded) {
    num::Tape probe(num::TapeOptions{.grad_enabled = false, .training = false, .precision = config_.precision});
    model_.codebook.seed_from(model_.encoder(probe, batch).value(), rng_);
    model_.codebook_seeded = true;
  }

  ForwardOptions opt;
  opt.alpha = config_.alpha;
  opt.beta = config_.beta;
  opt.compute_reg = config_.alpha != 0.0;
  const ForwardResult r = model_.forward(tape, batch, opt);
  rep.loss = r.breakdown();
  rep.step = step_;
  if (!std::isfinite(rep.loss.total)) {
    rep.message = "non-finite loss; step aborted";
    return rep;
  }
  for (auto* p : params_) p->zero_grad();
  tape.backward(r.total);
  const auto adam = num::adam_step(params_, adam_, config_.lr());
  rep.grad_norm = adam.grad_norm;
  if (!adam.applied) {
    rep.message = adam.message;
    return rep;
  }
  model_.codebook.ema_update(r.z_e.value(), r.quantized.codes);
  rep.reseeded = model_.codebook.reseed_dead_codes(r.z_e.value(), model_.config().dead_code_steps, rng_);
  rep.applied = true;
  ++step_;
  return rep;
}

TrainRunReport train(MuserModel& model, Trainer& trainer, std::span<const repr::CpSequence> corpus,
                     const TrainConfig& config, const StepCallback& on_step, bool stop_on_fault) {
  if (corpus.empty()) throw DataError("train: empty corpus");
  const std::size_t n = corpus.size();
  const std::size_t m = std::min(config.batch_size, n);
  const std::size_t per_epoch = (n + m - 1) / m;
  const std::size_t budget = config.steps ? config.steps : config.epochs * per_epoch;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  TrainRunReport out;
  for (std::size_t s = 0; s < budget; ++s) {
    std::vector<const repr::CpSequence*> picked;
    while (picked.size() < m) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), trainer.rng());
        cursor = 0;
      }
      picked.push_back(&corpus[order[cursor++]]);
    }
    const auto batch = model.make_batch(picked);
    StepReport rep = trainer.train_step(batch);
    if (out.steps.empty()) out.initial_total = rep.loss.total;
    out.final_total = rep.loss.total;
    if (on_step) on_step(rep);
    const bool ok = rep.applied;
    out.steps.push_back(std::move(rep));
    if (!ok) {
      ++out.aborted;
      if (stop_on_fault) break;
    }
  }
  return out;
}

}  // namespace muser::pipeline
