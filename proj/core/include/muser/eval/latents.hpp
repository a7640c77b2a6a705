#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "muser/numerics/tensor.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::pipeline {
class MuserModel;
}

namespace muser::eval {

struct LatentRow {
  std::string piece;
  repr::Emotion emotion = repr::Emotion::none;
  repr::TokenType element = repr::TokenType::family;
  std::vector<double> values;  // time-pooled l-dim vector
};

struct LatentDump {
  std::size_t slice_width = 0;
  std::vector<LatentRow> rows;

  /// Header: piece,emotion,element,z0..z{l-1}.
  [[nodiscard]] std::string to_csv() const;
};

/// One row per (piece, element): mean over the N_max steps of z_q^e.
LatentDump export_latents(pipeline::MuserModel& model, const std::vector<std::string>& ids,
                          std::span<const repr::CpSequence> corpus);

/// Projection onto the top two principal axes of the centred points
/// (covariance eigendecomposition).
std::vector<std::array<double, 2>> pca_2d(const std::vector<std::vector<double>>& points);

struct QuadrantSilhouette {
  repr::TokenType element;
  repr::Emotion first, second;
  double score = 0.0;
  std::size_t points = 0;
};

/// Silhouette per element and per quadrant pair, points restricted to the
/// two quadrants compared. Pairs with an empty side are skipped.
std::vector<QuadrantSilhouette> quadrant_silhouettes(const LatentDump& dump);

/// Per element and quadrant: counts over token indices, empty symbols
/// excluded (family counts every value; its 0 is EOS, not empty).
struct ElementHistogram {
  repr::TokenType element;
  repr::Emotion emotion;
  std::map<std::int32_t, std::size_t> counts;
};
std::vector<ElementHistogram> element_distribution(std::span<const repr::CpSequence> corpus);
/// Header: element,emotion,index,count.
std::string histogram_csv(const std::vector<ElementHistogram>& histograms);

}  // namespace muser::eval
