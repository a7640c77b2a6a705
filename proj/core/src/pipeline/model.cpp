#include "muser/pipeline/model.hpp"

#include <algorithm>

#include "muser/error.hpp"

namespace muser::pipeline {

double total_loss(double rec, double commit, double reg, double alpha, double beta) {
  return rec + beta * commit + alpha * reg;
}

LossBreakdown ForwardResult::breakdown() const {
  LossBreakdown b;
  for (std::size_t e = 0; e < repr::kElementCount; ++e) b.rec[e] = rec[e].value().item();
  b.rec_total = rec_total.value().item();
  b.commit = commit.value().item();
  b.reg_computed = reg.valid();
  b.reg = reg.valid() ? reg.value().item() : 0.0;
  b.total = total.value().item();
  return b;
}

namespace {

std::array<std::size_t, repr::kTokenTypes> vocab_sizes(const repr::Vocabulary& v) {
  std::array<std::size_t, repr::kTokenTypes> s{};
  for (std::size_t k = 0; k < repr::kTokenTypes; ++k) s[k] = v.size(repr::kAllTypes[k]);
  return s;
}

}  // namespace

MuserModel::MuserModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config), vocab_(repr::Vocabulary::for_preset(config.vocab)) {
  num::Rng rng(seed);
  const auto sizes = vocab_sizes(vocab_);
  vq::EncoderConfig ec;
  ec.vocab_sizes = sizes;
  ec.embed_sizes = config.embed_sizes;
  ec.shape = config.encoder;
  ec.latent_width = config.latent_width();
  ec.max_len = config.max_len;
  ec.dropout = config.dropout;
  encoder = vq::Encoder("encoder", ec, rng);

  codebook = vq::Codebook(config.codebook_size, config.latent_width(), config.ema_decay, config.ema_smoothing, rng);

  med::DrConfig dc;
  dc.mode = config.dr_mode;
  dc.seq_len = config.max_len;
  dc.slice_width = config.slice_width;
  dc.shape = config.dr;
  dc.dropout = config.dropout;
  if (config.med) dr = med::DrModel("dr", dc, rng);

  decode::DecoderConfig dec;
  dec.vocab_sizes = sizes;
  dec.embed_sizes = config.embed_sizes;
  dec.global = config.global_decoder;
  dec.element = config.element_decoder;
  dec.slice_width = config.slice_width;
  dec.max_len = config.max_len;
  dec.cond = config.cond_mode;
  dec.layout = config.effective_decoders();
  dec.dropout = config.dropout;
  decoder = decode::TwoLevelDecoder("decoder", dec, rng);
}

repr::TokenBatch MuserModel::make_batch(std::span<const repr::CpSequence> sequences) const {
  return repr::make_batch(sequences, config_.max_len);
}

repr::TokenBatch MuserModel::make_batch(std::span<const repr::CpSequence* const> sequences) const {
  return repr::make_batch(sequences, config_.max_len);
}

ForwardResult MuserModel::forward(num::Tape& tape, const repr::TokenBatch& batch, const ForwardOptions& options) {
  if (batch.length != config_.max_len) throw UsageError("forward: batch must be padded to N_max");
  const std::size_t m = batch.sequences;
  ForwardResult r;
  r.z_e = encoder(tape, batch);
  if (options.frozen) {
    if (!options.frozen->z_q.same_shape(r.z_e.value())) throw UsageError("forward: frozen latent shape mismatch");
    r.commit = vq::commitment_loss(r.z_e, options.frozen->z_q);
    r.z_q = num::add(r.z_e, tape.constant(options.frozen->offset));
  } else {
    r.quantized = vq::quantize(r.z_e.value(), codebook);
    r.commit = vq::commitment_loss(r.z_e, r.quantized.z_q);
    r.z_q = vq::straight_through(r.z_e, r.quantized.z_q);
  }

  if (config_.med && options.compute_reg) {
    r.z_dr = dr.reduce_all(r.z_q, m);
    std::array<Var, repr::kElementCount> latent;
    for (std::size_t e = 0; e < repr::kElementCount; ++e) {
      r.element_matrices[e] = med::element_distance_matrix(batch, repr::kElements[e]);
      latent[e] = med::latent_distance_matrix(r.z_dr[e]);
    }
    r.reg = med::regularization_loss(r.element_matrices, latent);
  }

  r.logits = decoder.forward(tape, batch, r.z_q, batch.length);
  Var rec;
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    r.rec[e] = num::cross_entropy(r.logits[e], batch.field(repr::kElements[e]), batch.mask);
    rec = rec.valid() ? num::add(rec, r.rec[e]) : r.rec[e];
  }
  r.rec_total = rec;
  r.total = num::add(rec, num::scale(r.commit, options.beta));
  if (r.reg.valid() && options.alpha != 0.0) r.total = num::add(r.total, num::scale(r.reg, options.alpha));
  return r;
}

vq::QuantizeResult MuserModel::encode(const repr::TokenBatch& batch, num::Precision precision) {
  num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false, .precision = precision});
  return vq::quantize(encoder(tape, batch).value(), codebook);
}

num::ParamList MuserModel::parameters() {
  num::ParamList out;
  encoder.collect(out);
  dr.collect(out);
  decoder.collect(out);
  return out;
}

num::ParamList MuserModel::dr_parameters() {
  num::ParamList out;
  dr.collect(out);
  return out;
}

Accuracy teacher_forced_accuracy(const ForwardResult& result, const repr::TokenBatch& batch) {
  Accuracy a;
  double denom = 0.0;
  for (double w : batch.mask) denom += w;
  if (denom == 0.0) return a;
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    const Tensor& L = result.logits[e].value();
    const auto targets = batch.field(repr::kElements[e]);
    double hit = 0.0;
    for (std::size_t r = 0; r < L.rows(); ++r) {
      if (batch.mask[r] == 0.0) continue;
      const auto row = L.row(r);
      const auto best = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == targets[r]) hit += batch.mask[r];
    }
    a.per_element[e] = hit / denom;
    a.mean += a.per_element[e] / static_cast<double>(repr::kElementCount);
  }
  return a;
}

Accuracy evaluate_accuracy(MuserModel& model, const repr::TokenBatch& batch) {
  num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false});
  ForwardOptions opt;
  opt.compute_reg = false;
  return teacher_forced_accuracy(model.forward(tape, batch, opt), batch);
}

DisentanglementReport sign_agreement(MuserModel& model, const repr::TokenBatch& batch) {
  if (!model.config().med) throw UsageError("sign_agreement: model has no MED branch");
  num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false});
  const Var z_e = model.encoder(tape, batch);
  const auto q = vq::quantize(z_e.value(), model.codebook);
  const auto z_dr = model.dr.reduce_all(tape.constant(q.z_q), batch.sequences);
  DisentanglementReport rep;
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    const Tensor M = med::element_distance_matrix(batch, repr::kElements[e]);
    const Tensor R = med::latent_distance_matrix(z_dr[e].value());
    rep.agreement[e] = med::sign_agreement(M, R).agreement;
    rep.mean += rep.agreement[e] / static_cast<double>(repr::kElementCount);
  }
  return rep;
}

}  // namespace muser::pipeline
