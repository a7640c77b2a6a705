#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace muser::repr {

struct NoteEvent {
  int pitch = 60;
  std::int64_t onset = 0;     // ticks
  std::int64_t duration = 1;  // ticks, > 0
  int velocity = 64;

  friend bool operator==(const NoteEvent&, const NoteEvent&) = default;
};

struct TempoChange {
  std::int64_t tick = 0;
  double bpm = 120.0;
};

struct ChordEvent {
  std::int64_t tick = 0;
  std::string symbol;
};

/// Plain note list plus tempo/bar grid. Notes are kept sorted by
/// (onset, pitch) by the producers in this library.
struct Score {
  std::vector<NoteEvent> notes;
  std::vector<TempoChange> tempo_changes;
  int ticks_per_beat = 480;
  int beats_per_bar = 4;
  std::vector<ChordEvent> chords;

  /// Ticks per sixteenth-note grid step.
  [[nodiscard]] double grid_ticks() const { return ticks_per_beat / 4.0; }
  /// Throws DataError when an invariant is broken.
  void validate() const;
  void sort_notes();
};

}  // namespace muser::repr
