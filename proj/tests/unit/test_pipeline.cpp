#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "../support/paper_table.hpp"
#include "muser/error.hpp"
#include "muser/pipeline/checkpoint.hpp"
#include "muser/pipeline/config.hpp"
#include "muser/pipeline/generate.hpp"
#include "muser/pipeline/model.hpp"
#include "muser/pipeline/prior.hpp"
#include "muser/pipeline/synthetic.hpp"
#include "muser/pipeline/trainer.hpp"
#include "muser/repr/tokenizer.hpp"

using namespace muser;
using namespace muser::pipeline;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config() {
  auto c = TrainConfig::desk();
  c.model.max_len = synthetic_max_length(1);
  c.model.codebook_size = 16;
  c.validate();
  return c;
}

std::vector<repr::CpSequence> tiny_corpus(const MuserModel& model, std::size_t count, std::uint64_t seed) {
  std::vector<repr::CpSequence> out;
  for (auto& p : synthetic_corpus(model.vocab(), {.count = count, .bars = 1, .seed = seed})) out.push_back(p.sequence);
  return out;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("muser_test_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                      "_" + name);
}

std::vector<Tensor> logits_of(MuserModel& model, const repr::TokenBatch& batch) {
  num::Tape t(num::TapeOptions{.grad_enabled = false});
  const auto r = model.forward(t, batch, {});
  std::vector<Tensor> out;
  for (const auto& l : r.logits) out.push_back(l.value());
  return out;
}

}  // namespace

TEST(Objective, TotalLossHandCase) { EXPECT_NEAR(total_loss(1.0, 2.0, 3.0, 0.1, 0.25), 1.8, 1e-12); }

TEST(Trainer, AlphaZeroLeavesDrUntouched) {
  auto c = tiny_config();
  c.alpha = 0.0;
  MuserModel model(c.model, 1);
  const auto corpus = tiny_corpus(model, 4, 2);
  std::vector<Tensor> before;
  for (auto* p : model.dr_parameters()) before.push_back(p->value);
  Trainer trainer(model, c);
  const auto report = trainer.train_step(model.make_batch(corpus));
  ASSERT_TRUE(report.applied) << report.message;
  const auto after = model.dr_parameters();
  for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i]->value, before[i]) << after[i]->name;
}

TEST(Trainer, StepChangesParametersAndReportsLosses) {
  const auto c = tiny_config();
  MuserModel model(c.model, 1);
  const auto corpus = tiny_corpus(model, 4, 2);
  Trainer trainer(model, c);
  const auto r = trainer.train_step(model.make_batch(corpus));
  ASSERT_TRUE(r.applied);
  EXPECT_TRUE(r.loss.reg_computed);
  EXPECT_NEAR(r.loss.total, total_loss(r.loss.rec_total, r.loss.commit, r.loss.reg, c.alpha, c.beta), 1e-9);
  EXPECT_TRUE(model.codebook_seeded);
  EXPECT_EQ(trainer.step(), 1u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto c = tiny_config();
  MuserModel model(c.model, 3);
  const auto corpus = tiny_corpus(model, 3, 4);
  Trainer trainer(model, c);
  ASSERT_TRUE(trainer.train_step(model.make_batch(corpus)).applied);
  const auto path = temp_file("model.musr");
  save_model(model, c, path);
  auto loaded = load_model(path);
  const auto batch = model.make_batch(corpus);
  EXPECT_EQ(logits_of(model, batch), logits_of(*loaded.model, batch));
  EXPECT_EQ(loaded.model->codebook.embeddings(), model.codebook.embeddings());
  EXPECT_EQ(to_json(loaded.config), to_json(c));
  fs::remove(path);
}

TEST(Checkpoint, ContainerRejectsCorruption) {
  Container c;
  c.metadata = "{}";
  c.arrays.push_back({"w", Tensor::matrix(1, 2, {1.5, -2.0}), false});
  auto bytes = encode_container(c);
  const auto back = decode_container(bytes);
  EXPECT_EQ(back.arrays[0].value, c.arrays[0].value);
  bytes[0] = 'X';
  EXPECT_THROW(decode_container(bytes), DataError);
  bytes = encode_container(c);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_container(bytes), DataError);
}

TEST(Config, JsonRoundTripAndStrictness) {
  const auto c = TrainConfig::paper();
  EXPECT_EQ(to_json(from_json(to_json(c))), to_json(c));
  EXPECT_THROW(from_json("{\"nope\": 1}"), Error);
  const auto o = resolve_config("desk", R"({"alpha": 0.0, "model": {"codebook_size": 8}})");
  EXPECT_EQ(o.alpha, 0.0);
  EXPECT_EQ(o.model.codebook_size, 8u);
  EXPECT_EQ(o.model.slice_width, TrainConfig::desk().model.slice_width);
  EXPECT_THROW(resolve_config("huge", ""), UsageError);
  EXPECT_THROW(resolve_config("desk", R"({"model": {"bogus": 1}})"), Error);
}

TEST(Config, PaperPresetMatchesPublishedTables) {
  const auto bad = muser::testing::paper_table_mismatches(TrainConfig::paper());
  EXPECT_TRUE(bad.empty()) << bad.front();
  EXPECT_FALSE(muser::testing::paper_table_mismatches(TrainConfig::desk()).empty());
}

TEST(Transfer, AssemblySlicesComeFromTheirSources) {
  num::Rng rng(9);
  const med::ElementSlicing s{3};
  const Tensor a = num::normal_tensor({5, 21}, 1.0, rng), b = num::normal_tensor({5, 21}, 1.0, rng);
  EXPECT_EQ(assemble_transfer(a, b, {}, s), a);
  for (unsigned mask = 0; mask < (1u << repr::kElementCount); ++mask) {
    std::vector<repr::TokenType> set;
    for (std::size_t e = 0; e < repr::kElementCount; ++e)
      if (mask & (1u << e)) set.push_back(repr::kElements[e]);
    const Tensor ab = assemble_transfer(a, b, set, s);
    for (std::size_t e = 0; e < repr::kElementCount; ++e) {
      const bool from_b = mask & (1u << e);
      const auto el = repr::kElements[e];
      EXPECT_EQ(med::slice_latent(ab, el, s), med::slice_latent(from_b ? b : a, el, s));
    }
  }
}

TEST(Transfer, EndToEndProvenance) {
  const auto c = tiny_config();
  MuserModel model(c.model, 5);
  const auto corpus = tiny_corpus(model, 2, 6);
  model.codebook_seeded = true;
  const std::vector<repr::TokenType> v = {repr::TokenType::velocity};
  const auto r = element_transfer(model, corpus[0], corpus[1], v, {.seed = 3});
  for (std::size_t e = 0; e + 1 < repr::kElementCount; ++e) EXPECT_EQ(r.provenance[e], 'A');
  EXPECT_EQ(r.provenance[6], 'B');
  EXPECT_TRUE(repr::validate_structure(r.sequence, model.vocab()).empty());
  EXPECT_EQ(r.sequence.emotion, corpus[0].emotion);
  const auto none = element_transfer(model, corpus[0], corpus[1], {}, {.seed = 3});
  EXPECT_EQ(none.z_ab, none.z_a);
}

TEST(Prior, InitialLossNearLogK) {
  PriorConfig pc{.codebook_size = 16, .max_len = 12, .shape = {1, 2, 16, 32}};
  PriorModel prior(pc, 1);
  PriorCorpus corpus;
  num::Rng rng(2);
  for (int i = 0; i < 4; ++i) {
    std::vector<std::int32_t> codes(12);
    for (auto& c : codes) c = static_cast<std::int32_t>(rng() % 16);
    corpus.codes.push_back(codes);
    corpus.emotions.push_back(repr::Emotion::q1);
  }
  num::Tape t(num::TapeOptions{.grad_enabled = false});
  const std::vector<std::size_t> idx = {0, 1, 2, 3};
  EXPECT_NEAR(prior_loss(prior, t, corpus, idx).value().item(), std::log(16.0), 1e-12);
}

TEST(Prior, MemorisesOneSequenceAndRequiresEmotion) {
  PriorConfig pc{.codebook_size = 8, .max_len = 10, .shape = {1, 2, 16, 32}};
  PriorModel prior(pc, 1);
  PriorCorpus corpus{{{1, 5, 2, 7, 7, 0, 3, 4, 6, 1}}, {repr::Emotion::q2}};
  const auto report = train_prior(prior, corpus, {.steps = 300, .batch_size = 1, .lr = 1e-2});
  EXPECT_GE(report.final_accuracy, 0.99);
  PriorCorpus missing{{{1, 2, 3, 4, 5, 6, 7, 0, 1, 2}}, {repr::Emotion::none}};
  EXPECT_THROW(train_prior(prior, missing, {.steps = 1}), Error);
}

TEST(Generate, DeterministicAndWellFormed) {
  const auto c = tiny_config();
  MuserModel model(c.model, 7);
  model.codebook_seeded = true;
  PriorModel prior(prior_config(c), 8);
  const GenerateOptions opt{.emotion = repr::Emotion::q4, .seed = 11};
  const auto a = generate(model, prior, opt), b = generate(model, prior, opt);
  EXPECT_EQ(a.sequence.tokens, b.sequence.tokens);
  EXPECT_EQ(a.codes, b.codes);
  EXPECT_LE(a.sequence.tokens.size(), c.model.max_len);
  EXPECT_EQ(a.sequence.tokens.back().family(), repr::Family::eos);
  EXPECT_TRUE(repr::validate_structure(a.sequence, model.vocab()).empty());
}

TEST(Synthetic, EmotionIgnoresLoudness) {
  for (bool fast : {false, true})
    for (bool major : {false, true}) {
      SyntheticFactors f{.fast = fast, .major = major, .loud = false};
      const auto quiet = synthetic_emotion(f);
      f.loud = true;
      EXPECT_EQ(synthetic_emotion(f), quiet);
    }
  EXPECT_EQ(synthetic_emotion({.fast = true, .major = true}), repr::Emotion::q1);
  EXPECT_EQ(synthetic_emotion({.fast = false, .major = false}), repr::Emotion::q3);
}
