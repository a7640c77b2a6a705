#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "muser/numerics/nn.hpp"
#include "muser/repr/vocab.hpp"

namespace muser::decode {

struct SamplingRule {
  double temperature = 1.0;
  double nucleus = 1.0;

  friend bool operator==(const SamplingRule&, const SamplingRule&) = default;
};

/// Temperature and nucleus mass per element, indexed in element order.
struct SamplingPolicy {
  std::array<SamplingRule, repr::kElementCount> rules{};

  static SamplingPolicy paper();
  [[nodiscard]] const SamplingRule& operator[](repr::TokenType t) const { return rules.at(repr::index_of(t)); }
  SamplingRule& operator[](repr::TokenType t) { return rules.at(repr::index_of(t)); }
  void validate() const;

  friend bool operator==(const SamplingPolicy&, const SamplingPolicy&) = default;
};

/// softmax(logits / temperature), truncated to the smallest descending-
/// probability prefix whose mass reaches `nucleus`, renormalised.
/// -inf logits are excluded. Returns the distribution (zero outside the
/// kept set).
std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature, double nucleus);
std::int32_t sample_token(std::span<const double> logits, double temperature, double nucleus, num::Rng& rng);

}  // namespace muser::decode
