#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "muser/numerics/nn.hpp"
#include "muser/repr/batch.hpp"

namespace muser::med {

using num::Tensor;
using num::Var;

/// Seven contiguous l-wide bands of the latent in element order
/// (f, b, t, c, p, d, v).
struct ElementSlicing {
  std::size_t width = 4;

  [[nodiscard]] std::size_t total() const { return width * repr::kElementCount; }
  /// First latent column of the element's band; throws for emotion.
  [[nodiscard]] std::size_t begin(repr::TokenType element) const;
};

Var slice_latent(Var z, repr::TokenType element, const ElementSlicing& slicing);
Tensor slice_latent(const Tensor& z, repr::TokenType element, const ElementSlicing& slicing);

enum class DrMode { transformer, mean };
std::string_view dr_mode_name(DrMode m);
std::optional<DrMode> parse_dr_mode(std::string_view s);

struct DrConfig {
  DrMode mode = DrMode::transformer;
  std::size_t seq_len = 256;
  std::size_t slice_width = 4;
  num::TransformerShape shape;
  double dropout = 0.0;
};

/// Maps each N x l element band to an N-vector. The transformer mode
/// transposes the band to l rows of width N, projects to the hidden width,
/// adds learned positions, runs a non-causal stack and reads position 0
/// back out at width N. One model is shared by all seven elements.
class DrModel {
 public:
  DrModel() = default;
  DrModel(const std::string& name, const DrConfig& config, num::Rng& rng);

  /// Band of one element for m sequences, (m*N) x l -> m x N.
  Var reduce(Var band, std::size_t sequences);
  /// All seven elements of z_q ((m*N) x L) in one pass; each result is m x N.
  std::array<Var, repr::kElementCount> reduce_all(Var z_q, std::size_t sequences);
  void collect(num::ParamList& out);
  [[nodiscard]] const DrConfig& config() const { return config_; }

 private:
  Var reduce_stacked(Var transposed, std::size_t bands);

  DrConfig config_;
  num::Linear input_;
  num::Parameter positions_;
  num::TransformerStack stack_;
  num::Linear output_;
};

/// M[i, j, t] = x_i[t] - x_j[t] over m index sequences of equal length.
Tensor element_distance_matrix(std::span<const std::vector<std::int32_t>> sequences);
Tensor element_distance_matrix(const repr::TokenBatch& batch, repr::TokenType element);
/// Same construction on real-valued rows of an m x N matrix.
Var latent_distance_matrix(Var z_dr);
Tensor latent_distance_matrix(const Tensor& z_dr);

/// sum over elements of mean |tanh(M^R) - sgn(M)|, sgn(0) = 0.
Var regularization_loss(std::span<const Tensor> element_matrices, std::span<const Var> latent_matrices);
double regularization_loss(std::span<const Tensor> element_matrices, std::span<const Tensor> latent_matrices);

struct SignAgreement {
  double agreement = 0.0;   // fraction of nonzero M entries with matching sign in M^R
  std::size_t entries = 0;  // nonzero M entries considered
};

/// Off-diagonal nonzero entries of M whose sign M^R reproduces.
SignAgreement sign_agreement(const Tensor& element_matrix, const Tensor& latent_matrix);

}  // namespace muser::med
