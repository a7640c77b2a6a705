#include "muser/pipeline/prior.hpp"

#include <algorithm>
#include <cmath>

#include "muser/decode/sampling.hpp"
#include "muser/error.hpp"

namespace muser::pipeline {

PriorModel::PriorModel(const PriorConfig& config, std::uint64_t seed) : config_(config) {
  num::Rng rng(seed);
  const std::size_t H = config.shape.width;
  codes_ = num::Embedding("prior.codes", config.codebook_size, H, rng);
  emotions_ = num::Embedding("prior.emotions", 5, H, rng);
  stack_ = num::TransformerStack("prior.stack", config.shape, false, rng);
  head_ = num::Linear("prior.head", H, config.codebook_size, rng);
  // Zero output weights: uniform next-code distribution (loss ln K) at init.
  head_.weight.value.fill(0.0);
  positions_ = num::sinusoidal_positions(config.max_len, H);
}

Var PriorModel::logits(num::Tape& tape, std::span<const std::int32_t> codes, std::span<const repr::Emotion> emotions,
                       std::size_t steps) {
  const std::size_t m = emotions.size();
  if (steps == 0 || steps > config_.max_len) throw UsageError("prior: invalid number of steps");
  if (codes.size() != m * steps) throw UsageError("prior: code count mismatch");
  for (auto c : codes) {
    if (c < 0 || static_cast<std::size_t>(c) >= config_.codebook_size) throw DataError("prior: code out of range");
  }
  const std::size_t H = config_.shape.width;
  std::vector<std::int32_t> emo(m * steps, 0);
  num::Tensor first({m * steps, H});
  for (std::size_t s = 0; s < m; ++s) {
    if (emotions[s] == repr::Emotion::none) throw DataError("prior: sequence without an emotion label");
    emo[s * steps] = static_cast<std::int32_t>(emotions[s]);
    for (std::size_t j = 0; j < H; ++j) first.at(s * steps, j) = 1.0;
  }
  Var x = num::shift_rows(codes_(tape, codes), steps);
  x = num::add(x, num::mul(emotions_(tape, emo), tape.constant(std::move(first))));
  num::Tensor pos({steps, H});
  std::copy(positions_.data(), positions_.data() + pos.size(), pos.data());
  x = num::add(x, tape.constant(std::move(pos)));
  x = num::dropout(x, config_.dropout);
  num::StackContext ctx;
  ctx.segment = steps;
  ctx.causal = true;
  ctx.dropout = config_.dropout;
  return head_(stack_(x, ctx));
}

std::vector<std::int32_t> PriorModel::sample(repr::Emotion emotion, std::size_t length, num::Rng& rng,
                                             double temperature) {
  if (emotion == repr::Emotion::none) throw UsageError("prior: an emotion is required for sampling");
  if (length == 0 || length > config_.max_len) throw UsageError("prior: invalid sample length");
  std::vector<std::int32_t> codes;
  const repr::Emotion emo[1] = {emotion};
  for (std::size_t t = 0; t < length; ++t) {
    std::vector<std::int32_t> input = codes;
    input.push_back(0);  // placeholder, never read by row t
    num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false});
    const auto& L = logits(tape, input, emo, t + 1).value();
    const auto row = L.row(t);
    codes.push_back(decode::sample_token({row.data(), row.size()}, temperature, 1.0, rng));
  }
  return codes;
}

void PriorModel::collect(num::ParamList& out) {
  codes_.collect(out);
  emotions_.collect(out);
  stack_.collect(out);
  head_.collect(out);
}

namespace {

void check_corpus(const PriorCorpus& corpus) {
  if (corpus.codes.empty()) throw DataError("prior: empty corpus");
  if (corpus.codes.size() != corpus.emotions.size()) throw DataError("prior: codes/emotions count mismatch");
  for (std::size_t i = 0; i < corpus.codes.size(); ++i) {
    if (corpus.codes[i].size() != corpus.codes[0].size()) throw DataError("prior: code sequences differ in length");
    if (corpus.emotions[i] == repr::Emotion::none) {
      throw DataError("prior: training sequence " + std::to_string(i) + " has no emotion label");
    }
  }
}

}  // namespace

Var prior_loss(PriorModel& prior, num::Tape& tape, const PriorCorpus& corpus, std::span<const std::size_t> indices) {
  const std::size_t N = corpus.codes.at(indices[0]).size();
  std::vector<std::int32_t> codes;
  std::vector<repr::Emotion> emo;
  for (auto i : indices) {
    codes.insert(codes.end(), corpus.codes[i].begin(), corpus.codes[i].end());
    emo.push_back(corpus.emotions[i]);
  }
  return num::cross_entropy(prior.logits(tape, codes, emo, N), codes);
}

double prior_accuracy(PriorModel& prior, const PriorCorpus& corpus) {
  check_corpus(corpus);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < corpus.codes.size(); ++i) {
    num::Tape tape(num::TapeOptions{.grad_enabled = false, .training = false});
    const repr::Emotion emo[1] = {corpus.emotions[i]};
    const auto& L = prior.logits(tape, corpus.codes[i], emo, corpus.codes[i].size()).value();
    for (std::size_t t = 0; t < L.rows(); ++t) {
      const auto row = L.row(t);
      const auto best = static_cast<std::int32_t>(std::max_element(row.begin(), row.end()) - row.begin());
      hit += best == corpus.codes[i][t];
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

PriorTrainReport train_prior(PriorModel& prior, const PriorCorpus& corpus, const PriorTrainOptions& options) {
  check_corpus(corpus);
  if (corpus.codes[0].size() > prior.config().max_len) throw DataError("prior: code sequence longer than N_max");
  num::Rng rng(options.seed);
  num::ParamList params;
  prior.collect(params);
  num::AdamState adam;
  adam.config.clip_norm = options.clip_norm;
  PriorTrainReport rep;
  const std::size_t n = corpus.codes.size();
  const std::size_t m = std::min(options.batch_size, n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t cursor = n;
  for (std::size_t step = 0; step < options.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < m) {
      if (cursor == n) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    num::Tape tape(num::TapeOptions{.grad_enabled = true, .training = true, .precision = options.precision}, rng());
    const Var loss = prior_loss(prior, tape, corpus, idx);
    const double value = loss.value().item();
    if (step == 0) rep.initial_loss = value;
    rep.losses.push_back(value);
    if (!std::isfinite(value)) {
      ++rep.skipped_steps;
      continue;
    }
    for (auto* p : params) p->zero_grad();
    tape.backward(loss);
    if (!num::adam_step(params, adam, options.lr).applied) ++rep.skipped_steps;
  }
  rep.final_accuracy = prior_accuracy(prior, corpus);
  return rep;
}

}  // namespace muser::pipeline
