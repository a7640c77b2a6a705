#include "muser/repr/vocab.hpp"

#include <algorithm>
#include <cmath>

#include "muser/error.hpp"

namespace muser::repr {

namespace {

constexpr std::array<std::string_view, kTokenTypes> kShort = {"f", "b", "t", "c", "p", "d", "v", "o"};
constexpr std::array<std::string_view, kTokenTypes> kLong = {"family",   "bar_beat", "tempo",    "chord",
                                                            "pitch",    "duration", "velocity", "emotion"};
constexpr std::array<std::string_view, 12> kRoots = {"C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"};
constexpr std::array<std::string_view, 11> kQualities = {"M",  "m",  "o",  "+",  "sus2", "sus4",
                                                         "7",  "M7", "m7", "o7", "/o7"};

}  // namespace

std::string_view short_name(TokenType t) { return kShort[index_of(t)]; }
std::string_view long_name(TokenType t) { return kLong[index_of(t)]; }

std::optional<TokenType> parse_element(std::string_view code) {
  for (std::size_t i = 0; i < kElementCount; ++i) {
    if (code == kShort[i] || code == kLong[i]) return kAllTypes[i];
  }
  return std::nullopt;
}

std::vector<TokenType> active_types(Family f) {
  switch (f) {
    case Family::eos: return {};
    case Family::emotion: return {TokenType::emotion};
    case Family::metric: return {TokenType::bar_beat, TokenType::tempo, TokenType::chord};
    case Family::note: return {TokenType::pitch, TokenType::duration, TokenType::velocity};
  }
  return {};
}

bool is_active(Family f, TokenType t) {
  if (t == TokenType::family) return true;
  const auto a = active_types(f);
  return std::find(a.begin(), a.end(), t) != a.end();
}

std::string_view emotion_name(Emotion e) {
  switch (e) {
    case Emotion::q1: return "Q1";
    case Emotion::q2: return "Q2";
    case Emotion::q3: return "Q3";
    case Emotion::q4: return "Q4";
    case Emotion::none: break;
  }
  return "none";
}

std::optional<Emotion> parse_emotion(std::string_view s) {
  if (s == "none") return Emotion::none;
  if (s == "Q1") return Emotion::q1;
  if (s == "Q2") return Emotion::q2;
  if (s == "Q3") return Emotion::q3;
  if (s == "Q4") return Emotion::q4;
  return std::nullopt;
}

std::string_view preset_name(VocabPreset p) { return p == VocabPreset::paper ? "paper" : "desk"; }

std::optional<VocabPreset> parse_preset(std::string_view s) {
  if (s == "paper") return VocabPreset::paper;
  if (s == "desk") return VocabPreset::desk;
  return std::nullopt;
}

std::vector<std::int32_t> CpSequence::element(TokenType t) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) out.push_back(tok[t]);
  return out;
}

CpToken eos_token() { return CpToken{}; }

CpToken emotion_token(Emotion e) {
  CpToken t;
  t[TokenType::family] = static_cast<std::int32_t>(Family::emotion);
  t[TokenType::emotion] = static_cast<std::int32_t>(e);
  return t;
}

Vocabulary Vocabulary::paper() {
  std::vector<std::int64_t> durations;
  for (int i = 1; i <= 16; ++i) durations.push_back(i);
  durations.push_back(32);
  std::vector<std::pair<int, int>> vel;
  for (int i = 0; i < 40; ++i) vel.emplace_back(3 * i + 1, 3 * i + 3);
  vel.emplace_back(121, 127);
  return build(VocabPreset::paper, 22, 107, std::move(durations), std::move(vel));
}

Vocabulary Vocabulary::desk() {
  std::vector<std::pair<int, int>> vel;
  for (int i = 0; i < 7; ++i) vel.emplace_back(16 * i + 1, 16 * i + 16);
  vel.emplace_back(113, 127);
  return build(VocabPreset::desk, 36, 83, {1, 2, 3, 4, 6, 8, 12, 16}, std::move(vel));
}

Vocabulary Vocabulary::for_preset(VocabPreset p) { return p == VocabPreset::paper ? paper() : desk(); }

Vocabulary Vocabulary::build(VocabPreset preset, int pitch_low, int pitch_high, std::vector<std::int64_t> durations,
                             std::vector<std::pair<int, int>> velocity_bins) {
  Vocabulary v;
  v.preset_ = preset;
  auto& sy = v.symbols_;

  sy[index_of(TokenType::family)] = {"EOS", "Emotion", "Metric", "Note"};

  auto& bb = sy[index_of(TokenType::bar_beat)];
  bb = {"<empty>", "Bar"};
  for (int i = 0; i < kGridPerBar; ++i) bb.push_back("Beat_" + std::to_string(i));

  auto& tempo = sy[index_of(TokenType::tempo)];
  tempo = {"<empty>", "CONTI"};
  for (int i = 0; i < 54; ++i) {
    v.tempos_.push_back(32.0 + 3.0 * i);
    tempo.push_back("Tempo_" + std::to_string(32 + 3 * i));
  }

  auto& chord = sy[index_of(TokenType::chord)];
  chord = {"<empty>", "CONTI", "N"};
  for (auto root : kRoots)
    for (auto q : kQualities) chord.push_back(std::string(root) + "_" + std::string(q));

  auto& pitch = sy[index_of(TokenType::pitch)];
  pitch = {"<empty>"};
  v.pitch_low_ = pitch_low;
  for (int p = pitch_low; p <= pitch_high; ++p) pitch.push_back("Pitch_" + std::to_string(p));

  auto& dur = sy[index_of(TokenType::duration)];
  dur = {"<empty>"};
  for (auto d : durations) dur.push_back("Duration_" + std::to_string(d));
  v.durations_ = std::move(durations);

  auto& vel = sy[index_of(TokenType::velocity)];
  vel = {"<empty>"};
  for (auto [lo, hi] : velocity_bins) vel.push_back("Velocity_" + std::to_string((lo + hi) / 2));
  v.velocity_bins_ = std::move(velocity_bins);

  sy[index_of(TokenType::emotion)] = {"<none>", "Q1", "Q2", "Q3", "Q4"};
  return v;
}

std::int32_t Vocabulary::tempo_index(double bpm, bool& clamped) const {
  const double step = tempos_[1] - tempos_[0];
  clamped = bpm < tempos_.front() - step / 2 || bpm > tempos_.back() + step / 2;
  std::size_t best = 0;
  for (std::size_t i = 1; i < tempos_.size(); ++i) {
    if (std::fabs(tempos_[i] - bpm) < std::fabs(tempos_[best] - bpm)) best = i;
  }
  return static_cast<std::int32_t>(best + 2);
}

double Vocabulary::tempo_bpm(std::int32_t index) const {
  if (index < 2 || static_cast<std::size_t>(index - 2) >= tempos_.size()) {
    throw DataError("tempo index " + std::to_string(index) + " carries no tempo value");
  }
  return tempos_[static_cast<std::size_t>(index - 2)];
}

std::int32_t Vocabulary::pitch_index(int pitch, bool& clamped) const {
  const int high = pitch_low_ + static_cast<int>(size(TokenType::pitch)) - 2;
  clamped = pitch < pitch_low_ || pitch > high;
  // Out-of-range pitches fold by octaves into the table.
  while (pitch < pitch_low_) pitch += 12;
  while (pitch > high) pitch -= 12;
  return static_cast<std::int32_t>(pitch - pitch_low_ + 1);
}

int Vocabulary::pitch_value(std::int32_t index) const {
  if (index < 1 || static_cast<std::size_t>(index) >= size(TokenType::pitch)) {
    throw DataError("pitch index " + std::to_string(index) + " carries no pitch");
  }
  return pitch_low_ + index - 1;
}

std::int32_t Vocabulary::duration_index(std::int64_t grid_units, bool& clamped) const {
  clamped = grid_units < durations_.front() || grid_units > durations_.back();
  std::size_t best = 0;
  for (std::size_t i = 1; i < durations_.size(); ++i) {
    if (std::llabs(durations_[i] - grid_units) < std::llabs(durations_[best] - grid_units)) best = i;
  }
  return static_cast<std::int32_t>(best + 1);
}

std::int64_t Vocabulary::duration_units(std::int32_t index) const {
  if (index < 1 || static_cast<std::size_t>(index) > durations_.size()) {
    throw DataError("duration index " + std::to_string(index) + " carries no duration");
  }
  return durations_[static_cast<std::size_t>(index - 1)];
}

std::int32_t Vocabulary::velocity_index(int velocity, bool& clamped) const {
  clamped = velocity < velocity_bins_.front().first || velocity > velocity_bins_.back().second;
  velocity = std::clamp(velocity, velocity_bins_.front().first, velocity_bins_.back().second);
  for (std::size_t i = 0; i < velocity_bins_.size(); ++i) {
    if (velocity <= velocity_bins_[i].second) return static_cast<std::int32_t>(i + 1);
  }
  return static_cast<std::int32_t>(velocity_bins_.size());
}

int Vocabulary::velocity_value(std::int32_t index) const {
  if (index < 1 || static_cast<std::size_t>(index) > velocity_bins_.size()) {
    throw DataError("velocity index " + std::to_string(index) + " carries no velocity");
  }
  const auto [lo, hi] = velocity_bins_[static_cast<std::size_t>(index - 1)];
  return (lo + hi) / 2;
}

int Vocabulary::velocity_bin_width(std::int32_t index) const {
  const auto [lo, hi] = velocity_bins_.at(static_cast<std::size_t>(index - 1));
  return hi - lo + 1;
}

std::optional<std::int32_t> Vocabulary::chord_index(std::string_view symbol) const {
  const auto& c = symbols(TokenType::chord);
  for (std::size_t i = 2; i < c.size(); ++i) {
    if (c[i] == symbol) return static_cast<std::int32_t>(i);
  }
  return std::nullopt;
}

std::string Vocabulary::chord_symbol(std::int32_t index) const {
  if (index < 2 || static_cast<std::size_t>(index) >= size(TokenType::chord)) {
    throw DataError("chord index " + std::to_string(index) + " carries no chord");
  }
  return symbols(TokenType::chord)[static_cast<std::size_t>(index)];
}

}  // namespace muser::repr
