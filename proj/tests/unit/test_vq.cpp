#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "muser/error.hpp"
#include "muser/numerics/grad_check.hpp"
#include "muser/numerics/nn.hpp"
#include "muser/numerics/ops.hpp"
#include "muser/repr/batch.hpp"
#include "muser/vq/codebook.hpp"
#include "muser/vq/encoder.hpp"

using namespace muser;
using namespace muser::num;
using namespace muser::vq;

namespace {

std::int32_t oracle_argmin(const Tensor& E, std::span<const double> z) {
  std::int32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < E.rows(); ++k) {
    double d = 0;
    for (std::size_t c = 0; c < E.cols(); ++c) d += (z[c] - E.at(k, c)) * (z[c] - E.at(k, c));
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::int32_t>(k);
    }
  }
  return best;
}

EncoderConfig small_encoder(std::size_t max_len) {
  const auto v = repr::Vocabulary::desk();
  EncoderConfig c;
  for (auto t : repr::kAllTypes) {
    c.vocab_sizes[repr::index_of(t)] = v.size(t);
    c.embed_sizes[repr::index_of(t)] = 4;
  }
  c.shape = {1, 2, 8, 16};
  c.latent_width = 14;
  c.max_len = max_len;
  return c;
}

repr::CpSequence tiny_sequence(std::size_t length, std::int32_t pitch) {
  repr::CpSequence s;
  s.emotion = repr::Emotion::q1;
  s.tokens.push_back(repr::emotion_token(repr::Emotion::q1));
  while (s.tokens.size() + 1 < length) {
    repr::CpToken t;
    t[repr::TokenType::family] = static_cast<std::int32_t>(repr::Family::note);
    t[repr::TokenType::pitch] = pitch;
    t[repr::TokenType::duration] = 2;
    t[repr::TokenType::velocity] = 3;
    s.tokens.push_back(t);
  }
  s.tokens.push_back(repr::eos_token());
  return s;
}

}  // namespace

TEST(Quantize, NearerCode) {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 1, 1}), 0.99, 1e-5);
  EXPECT_EQ(quantize(Tensor::matrix(1, 2, {0.2, 0.1}), cb).codes[0], 0);
}

TEST(Quantize, TieBreaksLowestIndex) {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 1, 1}), 0.99, 1e-5);
  EXPECT_EQ(quantize(Tensor::matrix(1, 2, {0.5, 0.5}), cb).codes[0], 0);
}

TEST(Quantize, MatchesExhaustiveOracleAndCopiesRows) {
  Rng rng(5);
  Codebook cb(normal_tensor({32, 8}, 1.0, rng), 0.99, 1e-5);
  const Tensor z = normal_tensor({64, 8}, 1.0, rng);
  const auto q = quantize(z, cb);
  ASSERT_EQ(q.codes.size(), 64u);
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(q.codes[i], oracle_argmin(cb.embeddings(), z.row(i)));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(q.z_q.at(i, c), cb.embeddings().at(q.codes[i], c));
  }
}

TEST(Quantize, NonFiniteInputIsFault) {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 1, 1}), 0.99, 1e-5);
  EXPECT_THROW(quantize(Tensor::matrix(1, 2, {std::nan(""), 0.0}), cb), NumericFault);
}

TEST(Quantize, WidthMismatch) {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 1, 1}), 0.99, 1e-5);
  EXPECT_THROW(quantize(Tensor::matrix(1, 3, {0, 0, 0}), cb), UsageError);
}

TEST(Ema, FixedPointWithSingleAssignment) {
  Codebook cb(Tensor::matrix(2, 2, {0.5, -1.5, 3.0, 2.0}), 0.99, 1e-5);
  const std::vector<std::int32_t> codes = {0};
  cb.ema_update(Tensor::matrix(1, 2, {0.5, -1.5}), codes);
  EXPECT_NEAR(cb.embeddings().at(0, 0), 0.5, 1e-4);
  EXPECT_NEAR(cb.embeddings().at(0, 1), -1.5, 1e-4);
}

TEST(Ema, UnassignedCountDecays) {
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 1, 1}), 0.99, 1e-5);
  const double before = cb.ema_count()[1];
  const std::vector<std::int32_t> codes = {0};
  cb.ema_update(Tensor::matrix(1, 2, {0.1, 0.1}), codes);
  EXPECT_NEAR(cb.ema_count()[1], before * 0.99, 1e-15);
}

TEST(Ema, ConvergesToClusterMeans) {
  Rng rng(7);
  const double means[3][2] = {{-4, 0}, {4, 0}, {0, 6}};
  Codebook cb(Tensor::matrix(3, 2, {-3, 1, 3, -1, 1, 5}), 0.99, 1e-5);
  for (int step = 0; step < 500; ++step) {
    Tensor z({30, 2});
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t c = 0; c < 2; ++c) z.at(i, c) = means[i % 3][c] + 0.01 * normal(rng);
    }
    cb.ema_update(z, quantize(z, cb).codes);
  }
  for (int k = 0; k < 3; ++k) {
    double best = 1e9;
    for (std::size_t r = 0; r < 3; ++r) {
      best = std::min(best, std::max(std::fabs(cb.embeddings().at(r, 0) - means[k][0]),
                                     std::fabs(cb.embeddings().at(r, 1) - means[k][1])));
    }
    EXPECT_LT(best, 1e-2);
  }
}

TEST(Ema, DeadCodesReseeded) {
  Rng rng(1);
  Codebook cb(Tensor::matrix(2, 2, {0, 0, 100, 100}), 0.99, 1e-5);
  const Tensor z = Tensor::matrix(2, 2, {0.1, 0.0, -0.1, 0.0});
  const std::vector<std::int32_t> codes = {0, 0};
  for (int i = 0; i < 3; ++i) cb.ema_update(z, codes);
  EXPECT_EQ(cb.reseed_dead_codes(z, 5, rng), 0u);
  EXPECT_EQ(cb.reseed_dead_codes(z, 3, rng), 1u);
  EXPECT_LT(std::fabs(cb.embeddings().at(1, 0)), 1.0);
}

TEST(Commitment, ZeroAndHandValue) {
  Tape t;
  const Tensor zq = Tensor::matrix(1, 2, {0.5, -0.5});
  EXPECT_EQ(commitment_loss(t.leaf(zq), zq).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(commitment_loss(t.leaf(Tensor::matrix(1, 2, {1.5, 0.5})), zq).value().item(), 1.0);
}

TEST(Commitment, GradientOnlyIntoEncoderSide) {
  Tape t;
  Var ze = t.leaf(Tensor::matrix(1, 2, {1.0, 2.0}), true);
  t.backward(commitment_loss(ze, Tensor::matrix(1, 2, {0.0, 0.0})));
  // d mean((ze - zq)^2) = 2 (ze - zq) / n
  EXPECT_DOUBLE_EQ(t.grad(ze.id())[0], 1.0);
  EXPECT_DOUBLE_EQ(t.grad(ze.id())[1], 2.0);
}

TEST(StraightThrough, ForwardIsQuantizedBackwardIsIdentity) {
  Tape t;
  Var ze = t.leaf(Tensor::matrix(1, 3, {0.1, 0.2, 0.3}), true);
  const Tensor zq = Tensor::matrix(1, 3, {1.0, 1.0, 1.0});
  Var out = vq::straight_through(ze, zq);
  EXPECT_EQ(out.value(), zq);
  const Tensor g = Tensor::matrix(1, 3, {0.7, -1.1, 2.5});
  t.backward(sum(mul(out, t.constant(g))));
  EXPECT_EQ(t.grad(ze.id()), g);
}

TEST(Encoder, ShapeAndLengthLimit) {
  Rng rng(2);
  Encoder enc("enc", small_encoder(6), rng);
  std::vector<repr::CpSequence> one = {tiny_sequence(2, 5)};
  Tape t;
  auto b = repr::make_batch(std::span<const repr::CpSequence>(one), 2);
  EXPECT_EQ(enc(t, b).value().shape(), (std::vector<std::size_t>{2, 14}));
  std::vector<repr::CpSequence> longer = {tiny_sequence(8, 5)};
  EXPECT_THROW(enc(t, repr::make_batch(std::span<const repr::CpSequence>(longer), 8)), Error);
}

TEST(Encoder, PaperLatentWidth) {
  // L = 7 * l with l = 16.
  EXPECT_EQ(16u * repr::kElementCount, 112u);
}

TEST(Encoder, DecoderThroughStraightThroughIsSmoothWithFrozenQuantization) {
  Rng rng(3);
  Encoder enc("enc", small_encoder(6), rng);
  Linear head("head", 14, 3, rng);
  std::vector<repr::CpSequence> seqs = {tiny_sequence(6, 5), tiny_sequence(6, 9)};
  const auto b = repr::make_batch(std::span<const repr::CpSequence>(seqs), 6);
  Tensor offset;
  {
    Tape t(TapeOptions{.grad_enabled = false});
    const Tensor ze = enc(t, b).value();
    Codebook cb(normal_tensor({8, 14}, 1.0, rng), 0.99, 1e-5);
    const auto q = quantize(ze, cb);
    offset = q.z_q;
    for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= ze[i];
  }
  auto loss = [&](Tape& t) {
    Var ze = enc(t, b);
    Tensor zq = ze.value();
    for (std::size_t i = 0; i < zq.size(); ++i) zq[i] += offset[i];
    Var z = vq::straight_through(ze, zq);
    return mean(mul(head(z), head(z)));
  };
  ParamList params;
  enc.collect(params);
  head.collect(params);
  EXPECT_LT(grad_check_params(loss, params, 1e-6, 6, 1).max_rel_error, 1e-4);
}
