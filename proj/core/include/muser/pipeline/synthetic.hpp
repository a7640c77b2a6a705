#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "muser/repr/score.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::pipeline {

/// Per-piece settings of the planted factors. Each factor drives mainly
/// one element: rhythm (family, bar/beat), tempo, chord quality, register
/// (pitch), note length (duration) and dynamics (velocity). The emotion
/// quadrant follows tempo (arousal) and chord quality (valence).
struct SyntheticFactors {
  int rhythm = 0;    // 0..3
  bool fast = false;
  bool major = false;
  bool high = false;
  bool long_notes = false;
  bool loud = false;
};

struct SyntheticPiece {
  repr::Score score;
  repr::CpSequence sequence;
  SyntheticFactors factors;
};

struct SyntheticOptions {
  std::size_t count = 64;
  std::size_t bars = 2;
  std::uint64_t seed = 0;
};

/// Longest sequence the generator can emit for `bars` bars.
std::size_t synthetic_max_length(std::size_t bars);

std::vector<SyntheticPiece> synthetic_corpus(const repr::Vocabulary& vocab, const SyntheticOptions& options);
/// Quadrant from tempo (arousal) and mode (valence).
repr::Emotion synthetic_emotion(const SyntheticFactors& f);

}  // namespace muser::pipeline
