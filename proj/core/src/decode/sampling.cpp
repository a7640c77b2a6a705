#include "muser/decode/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "muser/error.hpp"

namespace muser::decode {

SamplingPolicy SamplingPolicy::paper() {
  SamplingPolicy p;
  using T = repr::TokenType;
  p[T::family] = {1.0, 0.90};
  p[T::bar_beat] = {1.2, 1.00};
  p[T::tempo] = {1.2, 0.90};
  p[T::chord] = {1.0, 0.99};
  p[T::pitch] = {1.0, 0.90};
  p[T::duration] = {2.0, 0.90};
  p[T::velocity] = {5.0, 1.00};
  return p;
}

void SamplingPolicy::validate() const {
  for (const auto& r : rules) {
    if (!(r.temperature > 0.0)) throw UsageError("sampling: temperature must be positive");
    if (!(r.nucleus > 0.0 && r.nucleus <= 1.0)) throw UsageError("sampling: nucleus mass must lie in (0, 1]");
  }
}

std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature, double nucleus) {
  if (!(temperature > 0.0)) throw UsageError("sample_token: temperature must be positive");
  if (!(nucleus > 0.0 && nucleus <= 1.0)) throw UsageError("sample_token: nucleus mass must lie in (0, 1]");
  const double top = logits.empty() ? -INFINITY : *std::max_element(logits.begin(), logits.end());
  if (!std::isfinite(top)) throw NumericFault("sample_token: no finite logit");
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::isinf(logits[i]) ? 0.0 : std::exp((logits[i] - top) / temperature);
    z += p[i];
  }
  for (double& v : p) v /= z;

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += p[order[keep++]];
    if (mass >= nucleus) break;
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / mass;
  return out;
}

std::int32_t sample_token(std::span<const double> logits, double temperature, double nucleus, num::Rng& rng) {
  const auto p = nucleus_distribution(logits, temperature, nucleus);
  const double u = num::uniform01(rng);
  double acc = 0.0;
  std::int32_t last = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    acc += p[i];
    last = static_cast<std::int32_t>(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace muser::decode
