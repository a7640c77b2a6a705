#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "muser/repr/score.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::repr {

struct TokenizeOptions {
  /// Maximum sequence length including EOS; 0 means unlimited.
  std::size_t max_length = 0;
};

struct TokenizeReport {
  std::size_t clamped = 0;         // values pushed into the table edges
  bool truncated = false;          // sequence cut at a bar boundary
  std::size_t bars_emitted = 0;
  std::size_t bars_dropped = 0;
};

struct Tokenized {
  CpSequence sequence;
  TokenizeReport report;
};

/// Compound-word encoding on a 16-step-per-bar grid.
///
/// Emission order: [emotion]; per bar a bar token; per occupied grid step a
/// metric token (beat, tempo, chord), followed by one note token per note
/// sorted by pitch; a final EOS token. Tempo is written on the first beat
/// and on changes (CONTI otherwise); chords only when the score carries them.
Tokenized tokenize(const Score& score, Emotion emotion, const Vocabulary& vocab, const TokenizeOptions& options = {});

struct Detokenized {
  Score score;
  std::size_t skipped = 0;  // note tokens without pitch, duration or velocity
};

Detokenized detokenize(const CpSequence& sequence, const Vocabulary& vocab, int ticks_per_beat = 480);

/// Structural problems of a sequence; empty when well formed.
///   - every index within its vocabulary
///   - first token is emotion-family iff an emotion is set
///   - exactly one EOS-family token, at the end
///   - fields outside the family's active set hold the empty index
std::vector<std::string> validate_structure(const CpSequence& sequence, const Vocabulary& vocab);

}  // namespace muser::repr
