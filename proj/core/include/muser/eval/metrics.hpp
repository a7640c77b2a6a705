#pragma once

#include <string>
#include <vector>

#include "muser/repr/score.hpp"

namespace muser::eval {

/// Max pitch minus min pitch. Throws DataError on an empty score.
int pitch_range(const repr::Score& score);
/// Distinct pitch classes (pitch mod 12).
int n_pitch_classes(const repr::Score& score);
/// Mean number of sounding notes over grid steps where at least one note
/// sounds. A note covers steps [round(onset/g), max(start+1, round(end/g)))
/// with g the 16-per-bar grid step.
double polyphony(const repr::Score& score);

enum class Metric { pitch_range, n_pitch_classes, polyphony };

/// Metric per bar (bars without note onsets skipped), averaged over bars.
/// PR and NPC use the notes starting in the bar; POLY counts the grid steps
/// inside the bar and every note sounding there.
double bar_level(Metric metric, const repr::Score& score);

struct PieceMetrics {
  std::string id;
  double pr = 0, npc = 0, poly = 0, b_pr = 0, b_npc = 0, b_poly = 0;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
};

struct MetricsReport {
  std::vector<PieceMetrics> pieces;
  Summary pr, npc, poly, b_pr, b_npc, b_poly;

  [[nodiscard]] std::string to_json(int indent = 2) const;
  [[nodiscard]] std::string to_csv() const;
  [[nodiscard]] std::string to_table() const;
};

PieceMetrics piece_metrics(const std::string& id, const repr::Score& score);
MetricsReport metrics_report(const std::vector<std::pair<std::string, repr::Score>>& pieces);

}  // namespace muser::eval
