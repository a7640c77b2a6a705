#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

namespace muser::eval {

/// Mean silhouette (b - a) / max(a, b) with Euclidean distances. Points in
/// singleton clusters score 0. Throws when fewer than two clusters.
double silhouette(std::span<const std::vector<double>> points, std::span<const int> labels);

}  // namespace muser::eval
