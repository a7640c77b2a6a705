#pragma once

#include <filesystem>
#include <string>

#include "muser/repr/vocab.hpp"

namespace muser::repr {

/// Pre-tokenised corpus file:
///   {"version":1, "vocab_preset":"paper|desk", "emotion":"Q1..Q4|none",
///    "tokens":[[f,b,t,c,p,d,v,o], ...]}
/// Unknown keys, wrong arity and out-of-vocabulary indices are DataErrors.
struct EventStream {
  VocabPreset preset = VocabPreset::paper;
  CpSequence sequence;
};

EventStream parse_event_stream(const std::string& json_text);
EventStream load_event_stream(const std::filesystem::path& path);
std::string format_event_stream(const EventStream& stream);
void save_event_stream(const EventStream& stream, const std::filesystem::path& path);

}  // namespace muser::repr
