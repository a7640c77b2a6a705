#include "muser/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "muser/error.hpp"

namespace muser::eval {

namespace {

void require_notes(const repr::Score& s) {
  if (s.notes.empty()) throw DataError("metric undefined for a score without notes");
}

struct Span {
  std::int64_t begin, end;  // grid steps, half open
};

Span grid_span(const repr::NoteEvent& n, double g) {
  const auto b = static_cast<std::int64_t>(std::llround(static_cast<double>(n.onset) / g));
  const auto e = static_cast<std::int64_t>(std::llround(static_cast<double>(n.onset + n.duration) / g));
  return {b, std::max(b + 1, e)};
}

// Average occupancy over steps in [lo, hi) with at least one sounding note.
double occupancy(const std::vector<Span>& spans, std::int64_t lo, std::int64_t hi) {
  std::map<std::int64_t, int> delta;
  for (const auto& s : spans) {
    const auto b = std::max(s.begin, lo), e = std::min(s.end, hi);
    if (b >= e) continue;
    ++delta[b];
    --delta[e];
  }
  double weighted = 0.0, steps = 0.0;
  int active = 0;
  std::int64_t prev = 0;
  for (const auto& [at, d] : delta) {
    if (active > 0) {
      weighted += static_cast<double>(active) * static_cast<double>(at - prev);
      steps += static_cast<double>(at - prev);
    }
    active += d;
    prev = at;
  }
  if (steps == 0.0) throw DataError("polyphony undefined: no sounding grid step");
  return weighted / steps;
}

Summary summarize(const std::vector<PieceMetrics>& pieces, double PieceMetrics::*field) {
  Summary s;
  if (pieces.empty()) return s;
  for (const auto& p : pieces) s.mean += p.*field;
  s.mean /= static_cast<double>(pieces.size());
  for (const auto& p : pieces) s.stddev += (p.*field - s.mean) * (p.*field - s.mean);
  s.stddev = std::sqrt(s.stddev / static_cast<double>(pieces.size()));
  return s;
}

}  // namespace

int pitch_range(const repr::Score& score) {
  require_notes(score);
  const auto [lo, hi] = std::minmax_element(score.notes.begin(), score.notes.end(),
                                            [](const auto& a, const auto& b) { return a.pitch < b.pitch; });
  return hi->pitch - lo->pitch;
}

int n_pitch_classes(const repr::Score& score) {
  require_notes(score);
  std::set<int> classes;
  for (const auto& n : score.notes) classes.insert(n.pitch % 12);
  return static_cast<int>(classes.size());
}

double polyphony(const repr::Score& score) {
  require_notes(score);
  std::vector<Span> spans;
  for (const auto& n : score.notes) spans.push_back(grid_span(n, score.grid_ticks()));
  return occupancy(spans, std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::max());
}

double bar_level(Metric metric, const repr::Score& score) {
  require_notes(score);
  const double g = score.grid_ticks();
  const std::int64_t steps_per_bar = 4 * score.beats_per_bar;
  std::map<std::int64_t, repr::Score> bars;
  for (const auto& n : score.notes) {
    const auto bar = grid_span(n, g).begin / steps_per_bar;
    auto& b = bars[bar];
    b.ticks_per_beat = score.ticks_per_beat;
    b.beats_per_bar = score.beats_per_bar;
    b.notes.push_back(n);
  }
  std::vector<Span> spans;
  for (const auto& n : score.notes) spans.push_back(grid_span(n, g));
  double total = 0.0;
  for (const auto& [bar, sub] : bars) {
    switch (metric) {
      case Metric::pitch_range: total += pitch_range(sub); break;
      case Metric::n_pitch_classes: total += n_pitch_classes(sub); break;
      case Metric::polyphony: total += occupancy(spans, bar * steps_per_bar, (bar + 1) * steps_per_bar); break;
    }
  }
  return total / static_cast<double>(bars.size());
}

PieceMetrics piece_metrics(const std::string& id, const repr::Score& score) {
  PieceMetrics p;
  p.id = id;
  p.pr = pitch_range(score);
  p.npc = n_pitch_classes(score);
  p.poly = polyphony(score);
  p.b_pr = bar_level(Metric::pitch_range, score);
  p.b_npc = bar_level(Metric::n_pitch_classes, score);
  p.b_poly = bar_level(Metric::polyphony, score);
  return p;
}

MetricsReport metrics_report(const std::vector<std::pair<std::string, repr::Score>>& pieces) {
  MetricsReport r;
  for (const auto& [id, s] : pieces) r.pieces.push_back(piece_metrics(id, s));
  r.pr = summarize(r.pieces, &PieceMetrics::pr);
  r.npc = summarize(r.pieces, &PieceMetrics::npc);
  r.poly = summarize(r.pieces, &PieceMetrics::poly);
  r.b_pr = summarize(r.pieces, &PieceMetrics::b_pr);
  r.b_npc = summarize(r.pieces, &PieceMetrics::b_npc);
  r.b_poly = summarize(r.pieces, &PieceMetrics::b_poly);
  return r;
}

std::string MetricsReport::to_json(int indent) const {
  using nlohmann::json;
  auto sj = [](const Summary& s) { return json{{"mean", s.mean}, {"std", s.stddev}}; };
  json j;
  j["corpus"] = {{"PR", sj(pr)},     {"NPC", sj(npc)},     {"POLY", sj(poly)},
                 {"B-PR", sj(b_pr)}, {"B-NPC", sj(b_npc)}, {"B-POLY", sj(b_poly)}};
  j["pieces"] = json::array();
  for (const auto& p : pieces) {
    j["pieces"].push_back({{"id", p.id},
                           {"PR", p.pr},
                           {"NPC", p.npc},
                           {"POLY", p.poly},
                           {"B-PR", p.b_pr},
                           {"B-NPC", p.b_npc},
                           {"B-POLY", p.b_poly}});
  }
  return j.dump(indent);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "id,PR,NPC,POLY,B-PR,B-NPC,B-POLY\n";
  for (const auto& p : pieces) {
    os << p.id << ',' << p.pr << ',' << p.npc << ',' << p.poly << ',' << p.b_pr << ',' << p.b_npc << ',' << p.b_poly
       << '\n';
  }
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  os << "metric    mean      std\n";
  const std::pair<const char*, const Summary*> rows[] = {{"PR", &pr},     {"NPC", &npc},     {"POLY", &poly},
                                                         {"B-PR", &b_pr}, {"B-NPC", &b_npc}, {"B-POLY", &b_poly}};
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof buf, "%-8s %8.3f %8.3f\n", name, s->mean, s->stddev);
    os << buf;
  }
  os << "pieces: " << pieces.size() << '\n';
  return os.str();
}

}  // namespace muser::eval
