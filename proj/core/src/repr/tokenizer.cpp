#include "muser/repr/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "muser/error.hpp"

namespace muser::repr {

namespace {

constexpr int kGrid = Vocabulary::kGridPerBar;

std::int64_t to_grid(std::int64_t ticks, double grid_ticks) {
  return static_cast<std::int64_t>(std::llround(static_cast<double>(ticks) / grid_ticks));
}

struct StepEvents {
  std::vector<const NoteEvent*> notes;
  std::optional<double> tempo;
  std::optional<std::string> chord;
};

CpToken metric_token(std::int32_t bar_beat) {
  CpToken t;
  t[TokenType::family] = static_cast<std::int32_t>(Family::metric);
  t[TokenType::bar_beat] = bar_beat;
  return t;
}

}  // namespace

Tokenized tokenize(const Score& score, Emotion emotion, const Vocabulary& vocab, const TokenizeOptions& options) {
  score.validate();
  Tokenized result;
  auto& seq = result.sequence;
  seq.emotion = emotion;
  const double grid = score.grid_ticks();
  const bool has_chords = !score.chords.empty();

  std::map<std::int64_t, StepEvents> steps;
  for (const auto& n : score.notes) steps[to_grid(n.onset, grid)].notes.push_back(&n);

  std::int64_t last_step = steps.empty() ? -1 : steps.rbegin()->first;
  const std::int64_t last_bar = last_step < 0 ? -1 : last_step / kGrid;
  if (last_bar >= 0) {
    // The tempo in force at the start is written on the first beat.
    double initial = 120.0;
    for (const auto& t : score.tempo_changes) {
      if (to_grid(t.tick, grid) <= steps.begin()->first) initial = t.bpm;
    }
    steps.begin()->second.tempo = initial;
    for (const auto& t : score.tempo_changes) {
      const auto s = to_grid(t.tick, grid);
      if (s > steps.begin()->first && s / kGrid <= last_bar) steps[s].tempo = t.bpm;
    }
    for (const auto& c : score.chords) {
      const auto s = to_grid(c.tick, grid);
      if (s / kGrid <= last_bar) steps[std::max<std::int64_t>(s, 0)].chord = c.symbol;
    }
  }

  // Build per-bar token groups so truncation can happen at bar boundaries.
  std::vector<std::vector<CpToken>> bars(static_cast<std::size_t>(last_bar + 1));
  for (auto& b : bars) b.push_back(metric_token(kBarSymbol));
  std::int32_t last_tempo = -1;
  for (auto& [step, ev] : steps) {
    auto& bar = bars[static_cast<std::size_t>(step / kGrid)];
    CpToken beat = metric_token(Vocabulary::beat_index(static_cast<int>(step % kGrid)));
    if (ev.tempo) {
      bool clamped = false;
      const auto idx = vocab.tempo_index(*ev.tempo, clamped);
      result.report.clamped += clamped;
      beat[TokenType::tempo] = idx == last_tempo ? kContinue : idx;
      last_tempo = idx;
    } else {
      beat[TokenType::tempo] = kContinue;
    }
    if (has_chords) {
      beat[TokenType::chord] = kContinue;
      if (ev.chord) {
        auto idx = vocab.chord_index(*ev.chord);
        if (!idx) throw DataError("tokenize: unknown chord symbol '" + *ev.chord + "'");
        beat[TokenType::chord] = *idx;
      }
    }
    bar.push_back(beat);

    std::stable_sort(ev.notes.begin(), ev.notes.end(), [](const NoteEvent* a, const NoteEvent* b) {
      return std::tie(a->pitch, a->duration, a->velocity) < std::tie(b->pitch, b->duration, b->velocity);
    });
    for (const NoteEvent* n : ev.notes) {
      CpToken note;
      note[TokenType::family] = static_cast<std::int32_t>(Family::note);
      bool c1 = false, c2 = false, c3 = false;
      note[TokenType::pitch] = vocab.pitch_index(n->pitch, c1);
      note[TokenType::duration] =
          vocab.duration_index(std::max<std::int64_t>(1, to_grid(n->duration, grid)), c2);
      note[TokenType::velocity] = vocab.velocity_index(n->velocity, c3);
      result.report.clamped += static_cast<std::size_t>(c1) + c2 + c3;
      bar.push_back(note);
    }
  }

  if (emotion != Emotion::none) seq.tokens.push_back(emotion_token(emotion));
  for (const auto& bar : bars) {
    if (options.max_length > 0 && seq.tokens.size() + bar.size() + 1 > options.max_length) {
      result.report.truncated = true;
      result.report.bars_dropped = bars.size() - result.report.bars_emitted;
      break;
    }
    seq.tokens.insert(seq.tokens.end(), bar.begin(), bar.end());
    ++result.report.bars_emitted;
  }
  seq.tokens.push_back(eos_token());
  if (options.max_length > 0 && seq.tokens.size() > options.max_length) {
    throw DataError("tokenize: max_length too small for emotion and EOS tokens");
  }
  return result;
}

Detokenized detokenize(const CpSequence& sequence, const Vocabulary& vocab, int ticks_per_beat) {
  if (ticks_per_beat <= 0 || ticks_per_beat % 4 != 0) {
    throw UsageError("detokenize: ticks_per_beat must be a positive multiple of 4");
  }
  Detokenized out;
  Score& score = out.score;
  score.ticks_per_beat = ticks_per_beat;
  const std::int64_t grid = ticks_per_beat / 4;
  std::int64_t bar = -1;
  int position = 0;
  auto now = [&] { return (std::max<std::int64_t>(bar, 0) * kGrid + position) * grid; };

  for (const auto& tok : sequence.tokens) {
    for (auto t : kAllTypes) {
      if (!vocab.valid(t, tok[t])) throw DataError("detokenize: index out of range for " + std::string(long_name(t)));
    }
    const Family fam = tok.family();
    if (fam == Family::eos) break;
    if (fam == Family::metric) {
      const auto bb = tok[TokenType::bar_beat];
      if (bb == kBarSymbol) {
        ++bar;
        position = 0;
        continue;
      }
      if (bb >= 2) position = Vocabulary::beat_position(bb);
      if (tok[TokenType::tempo] >= 2) {
        score.tempo_changes.push_back(TempoChange{now(), vocab.tempo_bpm(tok[TokenType::tempo])});
      }
      if (tok[TokenType::chord] >= 2) {
        score.chords.push_back(ChordEvent{now(), vocab.chord_symbol(tok[TokenType::chord])});
      }
    } else if (fam == Family::note) {
      if (tok[TokenType::pitch] == kEmpty || tok[TokenType::duration] == kEmpty ||
          tok[TokenType::velocity] == kEmpty) {
        ++out.skipped;
        continue;
      }
      score.notes.push_back(NoteEvent{vocab.pitch_value(tok[TokenType::pitch]), now(),
                                      vocab.duration_units(tok[TokenType::duration]) * grid,
                                      vocab.velocity_value(tok[TokenType::velocity])});
    }
  }
  std::stable_sort(score.tempo_changes.begin(), score.tempo_changes.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  score.sort_notes();
  return out;
}

std::vector<std::string> validate_structure(const CpSequence& sequence, const Vocabulary& vocab) {
  std::vector<std::string> issues;
  const auto& toks = sequence.tokens;
  if (toks.empty()) {
    issues.emplace_back("sequence is empty");
    return issues;
  }
  std::size_t eos_count = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const auto& tok = toks[i];
    bool indices_ok = true;
    for (auto t : kAllTypes) {
      if (!vocab.valid(t, tok[t])) {
        issues.push_back("token " + std::to_string(i) + ": " + std::string(long_name(t)) + " index out of range");
        indices_ok = false;
      }
    }
    if (!indices_ok) continue;
    const Family fam = tok.family();
    if (fam == Family::eos) ++eos_count;
    for (auto t : kAllTypes) {
      if (!is_active(fam, t) && tok[t] != kEmpty) {
        issues.push_back("token " + std::to_string(i) + ": inactive field " + std::string(long_name(t)) +
                         " is not empty");
      }
    }
    if (fam == Family::emotion && i != 0) issues.push_back("token " + std::to_string(i) + ": emotion token after start");
  }
  const bool starts_with_emotion = toks.front().family() == Family::emotion;
  if (starts_with_emotion != (sequence.emotion != Emotion::none)) {
    issues.emplace_back("first token must be emotion-family exactly when an emotion is set");
  }
  if (starts_with_emotion && toks.front()[TokenType::emotion] != static_cast<std::int32_t>(sequence.emotion)) {
    issues.emplace_back("emotion token disagrees with the sequence emotion");
  }
  if (eos_count != 1) issues.push_back("expected exactly one EOS token, found " + std::to_string(eos_count));
  if (toks.back().family() != Family::eos) issues.emplace_back("last token is not EOS");
  return issues;
}

}  // namespace muser::repr
