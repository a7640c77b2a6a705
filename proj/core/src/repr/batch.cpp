#include "muser/repr/batch.hpp"

#include "muser/error.hpp"

namespace muser::repr {

TokenBatch make_batch(std::span<const CpSequence* const> sequences, std::size_t length) {
  if (sequences.empty()) throw DataError("batch: no sequences");
  if (length == 0) throw DataError("batch: zero length");
  TokenBatch b;
  b.sequences = sequences.size();
  b.length = length;
  for (auto& f : b.fields) f.assign(b.rows(), 0);
  b.mask.assign(b.rows(), 0.0);
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const CpSequence& seq = *sequences[s];
    if (seq.tokens.size() > length) {
      throw DataError("batch: sequence of length " + std::to_string(seq.tokens.size()) + " exceeds " +
                      std::to_string(length));
    }
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      for (std::size_t k = 0; k < kTokenTypes; ++k) b.fields[k][s * length + t] = seq.tokens[t].fields[k];
      b.mask[s * length + t] = 1.0;
    }
    b.lengths.push_back(seq.tokens.size());
    b.emotions.push_back(seq.emotion);
  }
  return b;
}

TokenBatch make_batch(std::span<const CpSequence> sequences, std::size_t length) {
  std::vector<const CpSequence*> ptrs;
  for (const auto& s : sequences) ptrs.push_back(&s);
  return make_batch(std::span<const CpSequence* const>(ptrs), length);
}

}  // namespace muser::repr
