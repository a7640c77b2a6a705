#include "muser/numerics/adam.hpp"

#include <cmath>

#include "muser/error.hpp"

namespace muser::num {

AdamReport adam_step(std::span<Parameter* const> params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw UsageError("adam: learning rate must be positive");
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Tensor::zeros_like(p->value));
      state.second_moment.push_back(Tensor::zeros_like(p->value));
    }
  }
  if (state.first_moment.size() != params.size()) throw UsageError("adam: parameter count changed between steps");

  AdamReport report;
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (!state.first_moment[i].same_shape(p.value)) {
      throw UsageError("adam: moment shape mismatch for '" + p.name + "'");
    }
    if (p.grad.empty()) continue;
    if (!p.grad.same_shape(p.value)) throw UsageError("adam: gradient shape mismatch for '" + p.name + "'");
    for (double g : p.grad.values()) {
      if (!std::isfinite(g)) {
        report.message = "non-finite gradient in '" + p.name + "'; step skipped";
        return report;
      }
      sq += g * g;
    }
  }
  report.grad_norm = std::sqrt(sq);
  const double clip = state.config.clip_norm > 0.0 && report.grad_norm > state.config.clip_norm
                          ? state.config.clip_norm / report.grad_norm
                          : 1.0;

  state.step += 1;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const bool has_grad = !p.grad.empty();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = has_grad ? p.grad[j] * clip : 0.0;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
  report.applied = true;
  return report;
}

}  // namespace muser::num
