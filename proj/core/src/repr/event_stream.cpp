#include "muser/repr/event_stream.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "muser/error.hpp"

namespace muser::repr {

using nlohmann::json;

EventStream parse_event_stream(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("event stream: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("event stream: top level must be an object");
  static const std::set<std::string> known = {"version", "vocab_preset", "emotion", "tokens"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) throw DataError("event stream: unknown field '" + key + "'");
  }
  for (const auto& key : known) {
    if (!doc.contains(key)) throw DataError("event stream: missing field '" + key + "'");
  }
  if (!doc["version"].is_number_integer() || doc["version"].get<int>() != 1) {
    throw DataError("event stream: unsupported version");
  }

  EventStream out;
  const auto preset = doc["vocab_preset"].is_string() ? parse_preset(doc["vocab_preset"].get<std::string>())
                                                      : std::nullopt;
  if (!preset) throw DataError("event stream: vocab_preset must be \"paper\" or \"desk\"");
  out.preset = *preset;
  const auto emotion = doc["emotion"].is_string() ? parse_emotion(doc["emotion"].get<std::string>()) : std::nullopt;
  if (!emotion) throw DataError("event stream: emotion must be Q1..Q4 or none");
  out.sequence.emotion = *emotion;

  const Vocabulary vocab = Vocabulary::for_preset(out.preset);
  if (!doc["tokens"].is_array()) throw DataError("event stream: tokens must be an array");
  std::size_t i = 0;
  for (const auto& row : doc["tokens"]) {
    if (!row.is_array() || row.size() != kTokenTypes) {
      throw DataError("event stream: token " + std::to_string(i) + " must have 8 fields");
    }
    CpToken tok;
    for (std::size_t k = 0; k < kTokenTypes; ++k) {
      if (!row[k].is_number_integer()) throw DataError("event stream: non-integer index");
      const auto v = row[k].get<std::int64_t>();
      if (v < 0 || static_cast<std::size_t>(v) >= vocab.size(kAllTypes[k])) {
        throw DataError("event stream: token " + std::to_string(i) + " " + std::string(long_name(kAllTypes[k])) +
                        " index " + std::to_string(v) + " exceeds vocabulary size " +
                        std::to_string(vocab.size(kAllTypes[k])));
      }
      tok.fields[k] = static_cast<std::int32_t>(v);
    }
    out.sequence.tokens.push_back(tok);
    ++i;
  }
  return out;
}

EventStream load_event_stream(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event stream: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_event_stream(ss.str());
}

std::string format_event_stream(const EventStream& stream) {
  json doc;
  doc["version"] = 1;
  doc["vocab_preset"] = std::string(preset_name(stream.preset));
  doc["emotion"] = std::string(emotion_name(stream.sequence.emotion));
  json tokens = json::array();
  for (const auto& t : stream.sequence.tokens) tokens.push_back(t.fields);
  doc["tokens"] = std::move(tokens);
  return doc.dump();
}

void save_event_stream(const EventStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write event stream: " + path.string());
  out << format_event_stream(stream) << '\n';
}

}  // namespace muser::repr
