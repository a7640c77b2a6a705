#include "muser/repr/midi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <tuple>

#include "muser/error.hpp"

namespace muser::repr {

void Score::validate() const {
  if (ticks_per_beat <= 0) throw DataError("score: ticks_per_beat must be positive");
  if (beats_per_bar <= 0) throw DataError("score: beats_per_bar must be positive");
  for (const auto& n : notes) {
    if (n.duration <= 0) throw DataError("score: note with non-positive duration");
    if (n.pitch < 0 || n.pitch > 127) throw DataError("score: pitch out of range");
    if (n.velocity < 1 || n.velocity > 127) throw DataError("score: velocity out of range");
  }
  if (!std::is_sorted(tempo_changes.begin(), tempo_changes.end(),
                      [](const auto& a, const auto& b) { return a.tick < b.tick; })) {
    throw DataError("score: tempo changes not sorted by tick");
  }
}

void Score::sort_notes() {
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& a, const NoteEvent& b) {
    return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
  });
}

namespace {

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t pos, std::size_t end) : bytes_(bytes), pos_(pos), end_(end) {}

  [[nodiscard]] bool done() const { return pos_ >= end_; }
  [[nodiscard]] std::size_t pos() const { return pos_; }

  std::uint8_t u8() {
    if (pos_ >= end_) throw DataError("midi: unexpected end of chunk");
    return bytes_[pos_++];
  }
  [[nodiscard]] std::uint8_t peek() const {
    if (pos_ >= end_) throw DataError("midi: unexpected end of chunk");
    return bytes_[pos_];
  }
  std::uint32_t u16() {
    const std::uint32_t hi = u8();
    return (hi << 8) | u8();
  }
  std::uint32_t u32() {
    const std::uint32_t hi = u16();
    return (hi << 16) | u16();
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw DataError("midi: variable-length quantity longer than 4 bytes");
  }
  void skip(std::size_t n) {
    if (n > end_ - pos_) throw DataError("midi: event length exceeds chunk");
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::size_t end_;
};

struct OpenNote {
  std::int64_t onset;
  int velocity;
};

void parse_track(Reader r, Score& score, bool& time_signature_seen) {
  std::int64_t tick = 0;
  std::uint8_t running = 0;
  std::map<int, std::deque<OpenNote>> open;  // key: channel * 128 + pitch

  auto close = [&](int key, std::int64_t at) {
    auto it = open.find(key);
    if (it == open.end() || it->second.empty()) return;
    const OpenNote on = it->second.front();
    it->second.pop_front();
    score.notes.push_back(NoteEvent{key % 128, on.onset, std::max<std::int64_t>(1, at - on.onset), on.velocity});
  };

  while (!r.done()) {
    tick += r.vlq();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else {
      if (running == 0) throw DataError("midi: data byte without running status");
      status = running;
    }

    if (status == 0xFF) {
      const std::uint8_t type = r.u8();
      const std::uint32_t len = r.vlq();
      if (type == 0x51 && len == 3) {
        const std::uint32_t usq = (std::uint32_t{r.u8()} << 16) | (std::uint32_t{r.u8()} << 8) | r.u8();
        if (usq == 0) throw DataError("midi: zero tempo");
        score.tempo_changes.push_back(TempoChange{tick, 60'000'000.0 / usq});
      } else if (type == 0x58 && len >= 2) {
        const int numerator = r.u8();
        r.skip(len - 1);
        if (!time_signature_seen && numerator > 0) {
          score.beats_per_bar = numerator;
          time_signature_seen = true;
        }
      } else if (type == 0x2F) {
        r.skip(len);
        break;
      } else {
        r.skip(len);
      }
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      r.skip(r.vlq());
      continue;
    }
    if (status >= 0xF0) throw DataError("midi: unexpected system message in track");

    running = status;
    const int kind = status & 0xF0;
    const int channel = status & 0x0F;
    const int a = r.u8();
    const int b = (kind == 0xC0 || kind == 0xD0) ? 0 : r.u8();
    if (a > 127 || b > 127) throw DataError("midi: data byte out of range");
    if (kind == 0x90 && b > 0) {
      open[channel * 128 + a].push_back(OpenNote{tick, b});
    } else if (kind == 0x80 || (kind == 0x90 && b == 0)) {
      close(channel * 128 + a, tick);
    }
  }
  for (auto& [key, queue] : open) {
    while (!queue.empty()) close(key, tick);
  }
}

void put_u16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put_u16(out, v >> 16);
  put_u16(out, v & 0xFFFF);
}

void put_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[5];
  int n = 0;
  buf[n++] = v & 0x7F;
  while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
  while (n) out.push_back(buf[--n]);
}

}  // namespace

Score parse_midi(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 14) throw DataError("midi: file too short for a header");
  Reader head(bytes, 0, bytes.size());
  if (head.u8() != 'M' || head.u8() != 'T' || head.u8() != 'h' || head.u8() != 'd') {
    throw DataError("midi: missing MThd header");
  }
  const std::uint32_t hlen = head.u32();
  if (hlen < 6) throw DataError("midi: malformed header length");
  const std::uint32_t format = head.u16();
  const std::uint32_t ntracks = head.u16();
  const std::uint32_t division = head.u16();
  if (format > 1) throw DataError("midi: only format 0 and 1 are supported");
  if (division & 0x8000) throw DataError("midi: SMPTE time division is not supported");
  if (division == 0) throw DataError("midi: zero ticks per beat");
  head.skip(hlen - 6);

  Score score;
  score.ticks_per_beat = static_cast<int>(division);
  bool time_signature_seen = false;
  std::size_t pos = head.pos();
  std::uint32_t tracks = 0;
  while (pos + 8 <= bytes.size() && tracks < ntracks) {
    Reader chunk(bytes, pos, bytes.size());
    char id[4];
    for (char& c : id) c = static_cast<char>(chunk.u8());
    const std::uint32_t len = chunk.u32();
    const std::size_t body = chunk.pos();
    if (len > bytes.size() - body) throw DataError("midi: chunk length exceeds file");
    if (std::string(id, 4) == "MTrk") {
      parse_track(Reader(bytes, body, body + len), score, time_signature_seen);
      ++tracks;
    }
    pos = body + len;
  }
  if (tracks == 0) throw DataError("midi: no MTrk chunk");
  if (score.notes.empty()) throw DataError("no note events");

  std::stable_sort(score.tempo_changes.begin(), score.tempo_changes.end(),
                   [](const auto& a, const auto& b) { return a.tick < b.tick; });
  score.sort_notes();
  return score;
}

Score read_midi_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open MIDI file: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_midi(bytes);
}

std::vector<std::uint8_t> write_midi(const Score& score) {
  score.validate();
  struct Event {
    std::int64_t tick;
    int order;  // tempo, then note-offs, then note-ons at equal ticks
    std::vector<std::uint8_t> data;
  };
  std::vector<Event> events;
  for (const auto& t : score.tempo_changes) {
    const auto usq = static_cast<std::uint32_t>(std::lround(60'000'000.0 / t.bpm));
    events.push_back({t.tick, 0,
                      {0xFF, 0x51, 0x03, static_cast<std::uint8_t>(usq >> 16), static_cast<std::uint8_t>(usq >> 8),
                       static_cast<std::uint8_t>(usq)}});
  }
  for (const auto& n : score.notes) {
    const auto p = static_cast<std::uint8_t>(n.pitch);
    events.push_back({n.onset, 2, {0x90, p, static_cast<std::uint8_t>(n.velocity)}});
    events.push_back({n.onset + n.duration, 1, {0x80, p, 0x40}});
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return std::tie(a.tick, a.order) < std::tie(b.tick, b.order); });

  std::vector<std::uint8_t> track;
  std::int64_t last = 0;
  for (const auto& e : events) {
    put_vlq(track, static_cast<std::uint32_t>(e.tick - last));
    last = e.tick;
    track.insert(track.end(), e.data.begin(), e.data.end());
  }
  put_vlq(track, 0);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd'};
  put_u32(out, 6);
  put_u16(out, 0);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint32_t>(score.ticks_per_beat));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_u32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

void write_midi_file(const Score& score, const std::filesystem::path& path) {
  const auto bytes = write_midi(score);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write MIDI file: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace muser::repr
