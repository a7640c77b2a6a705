#include "muser/vq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "muser/error.hpp"

namespace muser::vq {

Codebook::Codebook(std::size_t size, std::size_t width, double decay, double smoothing, num::Rng& rng)
    : Codebook(num::normal_tensor({size, width}, 1.0, rng), decay, smoothing) {}

Codebook::Codebook(Tensor embeddings, double decay, double smoothing)
    : embeddings_(std::move(embeddings)), decay_(decay), smoothing_(smoothing) {
  if (embeddings_.rank() != 2 || embeddings_.rows() < 2) throw UsageError("codebook: need K >= 2 rows");
  if (!(decay_ > 0.0 && decay_ < 1.0)) throw UsageError("codebook: decay must lie in (0, 1)");
  if (smoothing_ < 0.0) throw UsageError("codebook: smoothing must be non-negative");
  ema_count_ = Tensor({size()}, 1.0);
  ema_sum_ = embeddings_;
  idle_steps_.assign(size(), 0);
}

void Codebook::restore(Tensor embeddings, Tensor ema_count, Tensor ema_sum, std::vector<std::uint64_t> idle) {
  if (embeddings.rank() != 2 || !embeddings.same_shape(ema_sum) || ema_count.size() != embeddings.rows() ||
      idle.size() != embeddings.rows()) {
    throw DataError("codebook: inconsistent restored state");
  }
  embeddings_ = std::move(embeddings);
  ema_count_ = std::move(ema_count);
  ema_count_.reshape({embeddings_.rows()});
  ema_sum_ = std::move(ema_sum);
  idle_steps_ = std::move(idle);
}

void Codebook::reset_code(std::size_t k, std::span<const double> v) {
  std::copy(v.begin(), v.end(), embeddings_.row(k).begin());
  std::copy(v.begin(), v.end(), ema_sum_.row(k).begin());
  ema_count_[k] = 1.0;
  idle_steps_[k] = 0;
}

void Codebook::seed_from(const Tensor& samples, num::Rng& rng) {
  if (samples.cols() != width() || samples.rows() == 0) throw UsageError("codebook: seed samples have wrong width");
  const std::size_t n = samples.rows();
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng() % n);
  for (std::size_t k = 0; k < size(); ++k) {
    reset_code(k, samples.row(pick));
    const auto e = samples.row(pick);
    std::size_t far = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = 0.0;
      const auto r = samples.row(i);
      for (std::size_t j = 0; j < e.size(); ++j) d += (r[j] - e[j]) * (r[j] - e[j]);
      nearest[i] = std::min(nearest[i], d);
      if (nearest[i] > nearest[far]) far = i;
    }
    // Once every sample is covered, fall back to random rows with a small jitter.
    if (nearest[far] == 0.0) {
      for (std::size_t kk = k + 1; kk < size(); ++kk) {
        const auto src = samples.row(static_cast<std::size_t>(rng() % n));
        std::vector<double> v(src.begin(), src.end());
        for (double& x : v) x += 1e-3 * num::normal(rng);
        reset_code(kk, v);
      }
      return;
    }
    pick = far;
  }
}

void Codebook::refresh_embeddings() {
  const std::size_t K = size();
  double n = 0.0;
  for (std::size_t k = 0; k < K; ++k) n += ema_count_[k];
  for (std::size_t k = 0; k < K; ++k) {
    const double smoothed = (ema_count_[k] + smoothing_) / (n + static_cast<double>(K) * smoothing_) * n;
    auto e = embeddings_.row(k);
    const auto s = ema_sum_.row(k);
    for (std::size_t j = 0; j < e.size(); ++j) e[j] = s[j] / smoothed;
  }
}

void Codebook::ema_update(const Tensor& z_e, std::span<const std::int32_t> codes) {
  if (z_e.cols() != width() || z_e.rows() != codes.size()) throw UsageError("ema_update: shape mismatch");
  const std::size_t K = size();
  std::vector<double> counts(K, 0.0);
  Tensor sums({K, width()});
  for (std::size_t i = 0; i < codes.size(); ++i) {
    const auto k = static_cast<std::size_t>(codes[i]);
    if (k >= K) throw UsageError("ema_update: code out of range");
    counts[k] += 1.0;
    auto s = sums.row(k);
    const auto z = z_e.row(i);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] += z[j];
  }
  for (std::size_t k = 0; k < K; ++k) {
    ema_count_[k] = decay_ * ema_count_[k] + (1.0 - decay_) * counts[k];
    auto s = ema_sum_.row(k);
    const auto a = sums.row(k);
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = decay_ * s[j] + (1.0 - decay_) * a[j];
    idle_steps_[k] = counts[k] > 0.0 ? 0 : idle_steps_[k] + 1;
  }
  refresh_embeddings();
}

std::size_t Codebook::reseed_dead_codes(const Tensor& z_e, std::size_t threshold, num::Rng& rng) {
  if (threshold == 0 || z_e.rows() == 0) return 0;
  std::size_t reseeded = 0;
  for (std::size_t k = 0; k < size(); ++k) {
    if (idle_steps_[k] < threshold) continue;
    reset_code(k, z_e.row(static_cast<std::size_t>(rng() % z_e.rows())));
    ++reseeded;
  }
  return reseeded;
}

QuantizeResult quantize(const Tensor& z_e, const Codebook& codebook) {
  if (z_e.rank() != 2 || z_e.cols() != codebook.width()) throw UsageError("quantize: width mismatch");
  if (!z_e.all_finite()) throw NumericFault("quantize: non-finite encoder output");
  const Tensor& E = codebook.embeddings();
  QuantizeResult r;
  r.z_q = Tensor({z_e.rows(), z_e.cols()});
  r.codes.resize(z_e.rows());
  r.distances.resize(z_e.rows());
  for (std::size_t i = 0; i < z_e.rows(); ++i) {
    const auto z = z_e.row(i);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < E.rows(); ++k) {
      const auto e = E.row(k);
      double d = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) d += (z[j] - e[j]) * (z[j] - e[j]);
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    r.codes[i] = static_cast<std::int32_t>(arg);
    r.distances[i] = best;
    std::copy(E.row(arg).begin(), E.row(arg).end(), r.z_q.row(i).begin());
  }
  return r;
}

Tensor lookup(const Codebook& codebook, std::span<const std::int32_t> codes) {
  Tensor out({codes.size(), codebook.width()});
  for (std::size_t i = 0; i < codes.size(); ++i) {
    if (codes[i] < 0 || static_cast<std::size_t>(codes[i]) >= codebook.size()) {
      throw DataError("code index out of range");
    }
    const auto e = codebook.embeddings().row(static_cast<std::size_t>(codes[i]));
    std::copy(e.begin(), e.end(), out.row(i).begin());
  }
  return out;
}

num::Var commitment_loss(num::Var z_e, const Tensor& z_q) {
  if (!z_e.value().same_shape(z_q)) throw UsageError("commitment_loss: shape mismatch");
  const num::Var d = num::sub(z_e, z_e.tape().constant(z_q));
  return num::mean(num::mul(d, d));
}

num::Var straight_through(num::Var z_e, const Tensor& z_q) { return num::straight_through(z_e, z_q); }

}  // namespace muser::vq
