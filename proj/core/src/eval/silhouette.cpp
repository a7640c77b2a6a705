#include "muser/eval/silhouette.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "muser/error.hpp"

namespace muser::eval {

double silhouette(std::span<const std::vector<double>> points, std::span<const int> labels) {
  if (points.size() != labels.size()) throw UsageError("silhouette: points/labels count mismatch");
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw DataError("silhouette: need at least two clusters");
  const std::size_t n = points.size();
  for (const auto& p : points) {
    if (p.size() != points[0].size()) throw UsageError("silhouette: points differ in dimension");
  }
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < points[i].size(); ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sizes[labels[i]] == 1) continue;
    std::map<int, double> sums;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[labels[j]] += dist(i, j);
    }
    const double a = sums[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sums) {
      if (l != labels[i]) b = std::min(b, s / static_cast<double>(sizes[l]));
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace muser::eval
