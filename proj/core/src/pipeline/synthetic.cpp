#include "muser/pipeline/synthetic.hpp"

#include "muser/numerics/nn.hpp"
#include "muser/repr/tokenizer.hpp"

namespace muser::pipeline {

namespace {

struct Onset {
  int position;  // grid step within the bar
  int notes;
};

const std::array<std::vector<Onset>, 4> kRhythms = {{
    {{0, 2}, {4, 1}, {8, 2}, {12, 1}},
    {{0, 1}, {2, 1}, {4, 1}, {6, 1}},
    {{0, 2}, {8, 2}},
    {{0, 1}, {6, 2}, {12, 1}},
}};

}  // namespace

std::size_t synthetic_max_length(std::size_t bars) {
  std::size_t per_bar = 0;
  for (const auto& r : kRhythms) {
    std::size_t n = 1;
    for (const auto& o : r) n += 1 + static_cast<std::size_t>(o.notes);
    per_bar = std::max(per_bar, n);
  }
  return 2 + bars * per_bar;
}

// Arousal follows tempo and valence follows mode; loudness stays independent
// of the label so velocity can only be recovered from the latent.
repr::Emotion synthetic_emotion(const SyntheticFactors& f) {
  if (f.fast) return f.major ? repr::Emotion::q1 : repr::Emotion::q2;
  return f.major ? repr::Emotion::q4 : repr::Emotion::q3;
}

std::vector<SyntheticPiece> synthetic_corpus(const repr::Vocabulary& vocab, const SyntheticOptions& options) {
  num::Rng rng(options.seed);
  auto coin = [&] { return (rng() >> 63) != 0; };
  std::vector<SyntheticPiece> out;
  for (std::size_t i = 0; i < options.count; ++i) {
    SyntheticPiece p;
    auto& f = p.factors;
    f.rhythm = static_cast<int>(rng() % kRhythms.size());
    f.fast = coin();
    f.major = coin();
    f.high = coin();
    f.long_notes = coin();
    f.loud = coin();

    repr::Score& s = p.score;
    const int grid = static_cast<int>(s.grid_ticks());
    const int bar_ticks = grid * repr::Vocabulary::kGridPerBar;
    s.tempo_changes.push_back({0, f.fast ? 152.0 : 80.0});
    const int base = f.high ? 60 : 40;
    const std::array<int, 4> scale = {0, 2, 4, 7};
    for (std::size_t bar = 0; bar < options.bars; ++bar) {
      const std::int64_t start = static_cast<std::int64_t>(bar) * bar_ticks;
      const bool second = bar % 2 == 1;
      s.chords.push_back({start, f.major ? (second ? "F_M" : "C_M") : (second ? "D_m" : "A_m")});
      for (const auto& o : kRhythms[static_cast<std::size_t>(f.rhythm)]) {
        for (int k = 0; k < o.notes; ++k) {
          const int pitch = base + scale[rng() % scale.size()] + 12 * k;
          const int units = f.long_notes ? (coin() ? 8 : 12) : (coin() ? 1 : 2);
          const int velocity = (f.loud ? 104 : 40) + static_cast<int>(rng() % 8);
          s.notes.push_back({pitch, start + o.position * grid, units * grid, velocity});
        }
      }
    }
    s.sort_notes();
    p.sequence = repr::tokenize(s, synthetic_emotion(f), vocab).sequence;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace muser::pipeline
