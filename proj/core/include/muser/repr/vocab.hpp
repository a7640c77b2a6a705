#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace muser::repr {

/// The eight fields of a compound token, in storage order.
enum class TokenType : std::uint8_t { family, bar_beat, tempo, chord, pitch, duration, velocity, emotion };

inline constexpr std::size_t kTokenTypes = 8;
inline constexpr std::size_t kElementCount = 7;

/// Regularised elements in slice order (f, b, t, c, p, d, v). Emotion is
/// never an element.
inline constexpr std::array<TokenType, kElementCount> kElements = {
    TokenType::family, TokenType::bar_beat, TokenType::tempo,   TokenType::chord,
    TokenType::pitch,  TokenType::duration, TokenType::velocity};

inline constexpr std::array<TokenType, kTokenTypes> kAllTypes = {
    TokenType::family, TokenType::bar_beat, TokenType::tempo,    TokenType::chord,
    TokenType::pitch,  TokenType::duration, TokenType::velocity, TokenType::emotion};

constexpr std::size_t index_of(TokenType t) { return static_cast<std::size_t>(t); }

/// One-letter code (f b t c p d v o).
std::string_view short_name(TokenType t);
std::string_view long_name(TokenType t);
std::optional<TokenType> parse_element(std::string_view code);

enum class Family : std::int32_t { eos = 0, emotion = 1, metric = 2, note = 3 };

/// Field types a family may carry besides `family` itself.
std::vector<TokenType> active_types(Family f);
bool is_active(Family f, TokenType t);

enum class Emotion : std::int32_t { none = 0, q1 = 1, q2 = 2, q3 = 3, q4 = 4 };
std::string_view emotion_name(Emotion e);
/// Accepts "Q1".."Q4" and "none"; anything else is nullopt.
std::optional<Emotion> parse_emotion(std::string_view s);

enum class VocabPreset { paper, desk };
std::string_view preset_name(VocabPreset p);
std::optional<VocabPreset> parse_preset(std::string_view s);

inline constexpr std::int32_t kEmpty = 0;
inline constexpr std::int32_t kBarSymbol = 1;
inline constexpr std::int32_t kContinue = 1;  // tempo/chord unchanged

struct CpToken {
  std::array<std::int32_t, kTokenTypes> fields{};

  std::int32_t& operator[](TokenType t) { return fields[index_of(t)]; }
  std::int32_t operator[](TokenType t) const { return fields[index_of(t)]; }
  [[nodiscard]] Family family() const { return static_cast<Family>(fields[0]); }

  friend bool operator==(const CpToken&, const CpToken&) = default;
};

struct CpSequence {
  std::vector<CpToken> tokens;
  Emotion emotion = Emotion::none;

  [[nodiscard]] std::size_t size() const { return tokens.size(); }
  /// Index sequence of one field across all steps.
  [[nodiscard]] std::vector<std::int32_t> element(TokenType t) const;

  friend bool operator==(const CpSequence&, const CpSequence&) = default;
};

CpToken eos_token();
CpToken emotion_token(Emotion e);

/// Symbol tables and value binning for one preset. Index 0 of every type is
/// the empty symbol, except `family` where 0 is end-of-sequence.
///
/// Binning tables (paper preset):
///   tempo     [empty, CONTI, 32, 35, ..., 191 bpm]            56
///   chord     [empty, CONTI, N, 12 roots x 11 qualities]      135
///   pitch     [empty, MIDI 22 .. 107]                          87
///   duration  [empty, 1..16 and 32 sixteenth-note units]       18
///   velocity  [empty, 40 bins of width 3 over 1..120, 121..127] 42
/// The desk preset narrows pitch to MIDI 36..83, duration to
/// {1,2,3,4,6,8,12,16} and velocity to eight 16-wide bins.
class Vocabulary {
 public:
  static Vocabulary paper();
  static Vocabulary desk();
  static Vocabulary for_preset(VocabPreset p);

  [[nodiscard]] VocabPreset preset() const { return preset_; }
  [[nodiscard]] std::size_t size(TokenType t) const { return symbols_[index_of(t)].size(); }
  [[nodiscard]] const std::vector<std::string>& symbols(TokenType t) const { return symbols_[index_of(t)]; }
  [[nodiscard]] bool valid(TokenType t, std::int32_t index) const {
    return index >= 0 && static_cast<std::size_t>(index) < size(t);
  }

  // Each *_index sets `clamped` when the value lies outside the table.
  std::int32_t tempo_index(double bpm, bool& clamped) const;
  [[nodiscard]] double tempo_bpm(std::int32_t index) const;
  std::int32_t pitch_index(int pitch, bool& clamped) const;
  [[nodiscard]] int pitch_value(std::int32_t index) const;
  std::int32_t duration_index(std::int64_t grid_units, bool& clamped) const;
  [[nodiscard]] std::int64_t duration_units(std::int32_t index) const;
  std::int32_t velocity_index(int velocity, bool& clamped) const;
  [[nodiscard]] int velocity_value(std::int32_t index) const;
  /// Width of the velocity bin holding `index`.
  [[nodiscard]] int velocity_bin_width(std::int32_t index) const;
  [[nodiscard]] std::optional<std::int32_t> chord_index(std::string_view symbol) const;
  [[nodiscard]] std::string chord_symbol(std::int32_t index) const;

  static constexpr std::int32_t beat_index(int position) { return 2 + position; }
  static constexpr int beat_position(std::int32_t index) { return index - 2; }
  static constexpr int kGridPerBar = 16;

 private:
  static Vocabulary build(VocabPreset preset, int pitch_low, int pitch_high, std::vector<std::int64_t> durations,
                          std::vector<std::pair<int, int>> velocity_bins);

  VocabPreset preset_ = VocabPreset::paper;
  std::array<std::vector<std::string>, kTokenTypes> symbols_;
  std::vector<double> tempos_;
  int pitch_low_ = 0;
  std::vector<std::int64_t> durations_;
  std::vector<std::pair<int, int>> velocity_bins_;  // inclusive ranges
};

}  // namespace muser::repr
