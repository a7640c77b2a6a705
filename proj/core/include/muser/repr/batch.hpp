#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "muser/repr/vocab.hpp"

namespace muser::repr {

/// m sequences padded with all-zero (EOS/empty) tokens to a common length,
/// stored field-major: fields[type][seq * length + step].
struct TokenBatch {
  std::size_t sequences = 0;
  std::size_t length = 0;
  std::array<std::vector<std::int32_t>, kTokenTypes> fields;
  /// 1 for steps up to and including the sequence's EOS, 0 for padding.
  std::vector<double> mask;
  std::vector<std::size_t> lengths;
  std::vector<Emotion> emotions;

  [[nodiscard]] std::span<const std::int32_t> field(TokenType t) const { return fields[index_of(t)]; }
  [[nodiscard]] std::size_t rows() const { return sequences * length; }
  /// One sequence's field values (length entries).
  [[nodiscard]] std::span<const std::int32_t> element(TokenType t, std::size_t seq) const {
    return field(t).subspan(seq * length, length);
  }
};

TokenBatch make_batch(std::span<const CpSequence* const> sequences, std::size_t length);
TokenBatch make_batch(std::span<const CpSequence> sequences, std::size_t length);

}  // namespace muser::repr
