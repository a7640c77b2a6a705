#include "muser/med/med.hpp"

#include <cmath>

#include "muser/error.hpp"

namespace muser::med {

namespace {

double sgn(double x) { return static_cast<double>((x > 0.0) - (x < 0.0)); }

std::size_t element_position(repr::TokenType e) {
  if (e == repr::TokenType::emotion) throw UsageError("emotion is not an element slice");
  return repr::index_of(e);
}

}  // namespace

std::size_t ElementSlicing::begin(repr::TokenType element) const { return element_position(element) * width; }

Var slice_latent(Var z, repr::TokenType element, const ElementSlicing& slicing) {
  if (z.cols() != slicing.total()) throw UsageError("slice_latent: latent width is not 7 * l");
  return num::slice_cols(z, slicing.begin(element), slicing.width);
}

Tensor slice_latent(const Tensor& z, repr::TokenType element, const ElementSlicing& slicing) {
  if (z.rank() != 2 || z.cols() != slicing.total()) throw UsageError("slice_latent: latent width is not 7 * l");
  const std::size_t b = slicing.begin(element);
  Tensor out({z.rows(), slicing.width});
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < slicing.width; ++c) out.at(r, c) = z.at(r, b + c);
  }
  return out;
}

std::string_view dr_mode_name(DrMode m) { return m == DrMode::transformer ? "transformer" : "mean"; }

std::optional<DrMode> parse_dr_mode(std::string_view s) {
  if (s == "transformer" || s == "trans") return DrMode::transformer;
  if (s == "mean") return DrMode::mean;
  return std::nullopt;
}

DrModel::DrModel(const std::string& name, const DrConfig& config, num::Rng& rng) : config_(config) {
  if (config.mode == DrMode::mean) return;
  input_ = num::Linear(name + ".input", config.seq_len, config.shape.width, rng);
  positions_ = num::Parameter(name + ".positions",
                              num::normal_tensor({config.slice_width, config.shape.width}, 0.02, rng));
  stack_ = num::TransformerStack(name + ".stack", config.shape, false, rng);
  output_ = num::Linear(name + ".output", config.shape.width, config.seq_len, rng);
}

Var DrModel::reduce_stacked(Var transposed, std::size_t bands) {
  num::Tape& tape = transposed.tape();
  const std::size_t l = config_.slice_width;
  Var x = num::add(input_(transposed), tape.param(positions_));
  x = num::dropout(x, config_.dropout);
  num::StackContext ctx;
  ctx.segment = l;
  ctx.dropout = config_.dropout;
  x = stack_(x, ctx);
  std::vector<std::size_t> first(bands);
  for (std::size_t b = 0; b < bands; ++b) first[b] = b * l;
  return output_(num::gather_rows(x, first));
}

Var DrModel::reduce(Var band, std::size_t sequences) {
  const std::size_t N = config_.seq_len, l = config_.slice_width;
  if (band.cols() != l) throw UsageError("dr_reduce: band width differs from l");
  if (band.rows() != sequences * N) {
    throw UsageError("dr_reduce: sequence length " + std::to_string(band.rows() / std::max<std::size_t>(sequences, 1)) +
                     " differs from the DR feature width " + std::to_string(N));
  }
  if (config_.mode == DrMode::mean) {
    Tensor w({l, 1}, 1.0 / static_cast<double>(l));
    return num::reshape(num::matmul(band, band.tape().constant(std::move(w))), {sequences, N});
  }
  return reduce_stacked(num::block_transpose(band, N), sequences);
}

std::array<Var, repr::kElementCount> DrModel::reduce_all(Var z_q, std::size_t sequences) {
  const std::size_t N = config_.seq_len, l = config_.slice_width;
  if (z_q.cols() != l * repr::kElementCount) throw UsageError("dr_reduce: latent width is not 7 * l");
  if (z_q.rows() != sequences * N) throw UsageError("dr_reduce: sequence length differs from the DR feature width");
  const ElementSlicing slicing{l};
  std::array<Var, repr::kElementCount> out;
  if (config_.mode == DrMode::mean) {
    for (std::size_t e = 0; e < repr::kElementCount; ++e) {
      out[e] = reduce(slice_latent(z_q, repr::kElements[e], slicing), sequences);
    }
    return out;
  }
  std::vector<Var> parts;
  for (auto e : repr::kElements) parts.push_back(num::block_transpose(slice_latent(z_q, e, slicing), N));
  const Var all = reduce_stacked(num::concat_rows(parts), sequences * repr::kElementCount);
  for (std::size_t e = 0; e < repr::kElementCount; ++e) {
    std::vector<std::size_t> rows(sequences);
    for (std::size_t s = 0; s < sequences; ++s) rows[s] = e * sequences + s;
    out[e] = num::gather_rows(all, rows);
  }
  return out;
}

void DrModel::collect(num::ParamList& out) {
  if (config_.mode == DrMode::mean) return;
  input_.collect(out);
  out.push_back(&positions_);
  stack_.collect(out);
  output_.collect(out);
}

Tensor element_distance_matrix(std::span<const std::vector<std::int32_t>> sequences) {
  const std::size_t m = sequences.size();
  if (m == 0) throw UsageError("element_distance_matrix: empty batch");
  const std::size_t N = sequences[0].size();
  for (const auto& s : sequences) {
    if (s.size() != N) throw UsageError("element_distance_matrix: length mismatch");
  }
  Tensor M({m, m, N});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < N; ++t) {
        M[(i * m + j) * N + t] = static_cast<double>(sequences[i][t]) - static_cast<double>(sequences[j][t]);
      }
  return M;
}

Tensor element_distance_matrix(const repr::TokenBatch& batch, repr::TokenType element) {
  std::vector<std::vector<std::int32_t>> seqs;
  for (std::size_t s = 0; s < batch.sequences; ++s) {
    const auto e = batch.element(element, s);
    seqs.emplace_back(e.begin(), e.end());
  }
  return element_distance_matrix(seqs);
}

Var latent_distance_matrix(Var z_dr) { return num::pairwise_diff(z_dr); }

Tensor latent_distance_matrix(const Tensor& z) {
  if (z.rank() != 2) throw UsageError("latent_distance_matrix: expected m x N");
  const std::size_t m = z.rows(), N = z.cols();
  Tensor M({m, m, N});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t t = 0; t < N; ++t) M[(i * m + j) * N + t] = z.at(i, t) - z.at(j, t);
  return M;
}

Var regularization_loss(std::span<const Tensor> element_matrices, std::span<const Var> latent_matrices) {
  if (element_matrices.size() != latent_matrices.size() || element_matrices.empty()) {
    throw UsageError("regularization_loss: need one latent matrix per element matrix");
  }
  Var total;
  for (std::size_t e = 0; e < element_matrices.size(); ++e) {
    const Tensor& M = element_matrices[e];
    if (!M.same_shape(latent_matrices[e].value())) throw UsageError("regularization_loss: shape mismatch");
    Tensor target(M.shape());
    for (std::size_t i = 0; i < M.size(); ++i) target[i] = sgn(M[i]);
    num::Tape& tape = latent_matrices[e].tape();
    const Var term =
        num::mean(num::abs(num::sub(num::tanh(latent_matrices[e]), tape.constant(std::move(target)))));
    total = total.valid() ? num::add(total, term) : term;
  }
  return total;
}

double regularization_loss(std::span<const Tensor> element_matrices, std::span<const Tensor> latent_matrices) {
  if (element_matrices.size() != latent_matrices.size() || element_matrices.empty()) {
    throw UsageError("regularization_loss: need one latent matrix per element matrix");
  }
  double total = 0.0;
  for (std::size_t e = 0; e < element_matrices.size(); ++e) {
    const Tensor& M = element_matrices[e];
    const Tensor& R = latent_matrices[e];
    if (!M.same_shape(R)) throw UsageError("regularization_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < M.size(); ++i) s += std::fabs(std::tanh(R[i]) - sgn(M[i]));
    total += s / static_cast<double>(M.size());
  }
  return total;
}

SignAgreement sign_agreement(const Tensor& M, const Tensor& R) {
  if (!M.same_shape(R) || M.rank() != 3) throw UsageError("sign_agreement: shape mismatch");
  const std::size_t m = M.shape()[0], N = M.shape()[2];
  std::size_t hits = 0, total = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      for (std::size_t t = 0; t < N; ++t) {
        const std::size_t k = (i * m + j) * N + t;
        if (M[k] == 0.0) continue;
        ++total;
        if (sgn(R[k]) == sgn(M[k])) ++hits;
      }
    }
  return {total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0, total};
}

}  // namespace muser::med
