#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "muser/repr/score.hpp"

namespace muser::repr {

/// Standard MIDI file (format 0 or 1) to Score. Note-on/off pairs are
/// matched per (channel, pitch) in FIFO order; notes still open at the end
/// of their track are closed there.
Score parse_midi(std::span<const std::uint8_t> bytes);
Score read_midi_file(const std::filesystem::path& path);

/// Format-0 file with tempo meta events and one note-on/off pair per note.
std::vector<std::uint8_t> write_midi(const Score& score);
void write_midi_file(const Score& score, const std::filesystem::path& path);

}  // namespace muser::repr
