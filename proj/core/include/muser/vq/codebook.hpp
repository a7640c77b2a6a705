#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "muser/numerics/nn.hpp"

namespace muser::vq {

using num::Tensor;

/// K x L embedding table maintained by exponential moving averages.
///
/// After each update:
///   count_k <- decay * count_k + (1 - decay) * n_k
///   sum_k   <- decay * sum_k   + (1 - decay) * (sum of vectors assigned to k)
///   e_k     <- sum_k / ((count_k + eps) / (n + K * eps) * n),   n = sum_k count_k
/// Counts start at 1 and sums at the initial embeddings, so an untouched
/// code keeps its vector while its count decays.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::size_t size, std::size_t width, double decay, double smoothing, num::Rng& rng);
  Codebook(Tensor embeddings, double decay, double smoothing);

  [[nodiscard]] std::size_t size() const { return embeddings_.rows(); }
  [[nodiscard]] std::size_t width() const { return embeddings_.cols(); }
  [[nodiscard]] const Tensor& embeddings() const { return embeddings_; }
  [[nodiscard]] const Tensor& ema_count() const { return ema_count_; }
  [[nodiscard]] const Tensor& ema_sum() const { return ema_sum_; }
  [[nodiscard]] const std::vector<std::uint64_t>& idle_steps() const { return idle_steps_; }
  [[nodiscard]] double decay() const { return decay_; }
  [[nodiscard]] double smoothing() const { return smoothing_; }

  /// Replaces all rows with distinct rows of `samples` chosen by farthest-
  /// point traversal from a random start; resets the EMA statistics.
  void seed_from(const Tensor& samples, num::Rng& rng);
  /// Restores full state (checkpoint loading).
  void restore(Tensor embeddings, Tensor ema_count, Tensor ema_sum, std::vector<std::uint64_t> idle);
  /// Sets row k and its EMA statistics to `v` with unit count.
  void reset_code(std::size_t k, std::span<const double> v);

  void ema_update(const Tensor& z_e, std::span<const std::int32_t> codes);
  /// Reseeds codes idle for at least `threshold` updates from random rows of
  /// `z_e`. Returns how many were reseeded.
  std::size_t reseed_dead_codes(const Tensor& z_e, std::size_t threshold, num::Rng& rng);

 private:
  void refresh_embeddings();

  Tensor embeddings_;
  Tensor ema_count_;
  Tensor ema_sum_;
  std::vector<std::uint64_t> idle_steps_;
  double decay_ = 0.99;
  double smoothing_ = 1e-5;
};

struct QuantizeResult {
  Tensor z_q;                        // N x L, rows copied from the codebook
  std::vector<std::int32_t> codes;   // argmin index per row, lowest index on ties
  std::vector<double> distances;     // squared distance to the chosen code
};

QuantizeResult quantize(const Tensor& z_e, const Codebook& codebook);
/// Rows of the codebook for the given codes.
Tensor lookup(const Codebook& codebook, std::span<const std::int32_t> codes);

/// mean((z_e - sg[z_q])^2); gradient reaches z_e only.
num::Var commitment_loss(num::Var z_e, const Tensor& z_q);
/// Forward z_q, backward passes the gradient to z_e unchanged.
num::Var straight_through(num::Var z_e, const Tensor& z_q);

}  // namespace muser::vq
