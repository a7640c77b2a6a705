#include "muser/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "muser/error.hpp"

namespace muser::num {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-8 && eps <= 1e-4)) throw UsageError("grad_check: eps must lie in [1e-8, 1e-4]");
}

double finite_or_throw(double v) {
  if (!std::isfinite(v)) throw NumericFault("grad_check: function is non-finite at a probe point");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1.0, std::fabs(analytic));
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps, TapeOptions options,
                           std::uint64_t dropout_seed) {
  check_eps(eps);
  Tensor analytic;
  options.grad_enabled = true;
  {
    Tape tape(options, dropout_seed);
    Var xv = tape.leaf(x, true);
    Var y = f(xv);
    if (y.value().size() != 1) throw UsageError("grad_check: function must be scalar-valued");
    finite_or_throw(y.value().item());
    tape.backward(y);
    analytic = tape.grad(xv.id()).empty() ? Tensor::zeros_like(x) : tape.grad(xv.id());
  }
  TapeOptions probe_options = options;
  probe_options.grad_enabled = false;
  auto eval = [&](const Tensor& at) {
    Tape tape(probe_options, dropout_seed);
    return finite_or_throw(f(tape.leaf(at)).value().item());
  };
  GradCheckResult result;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = eval(probe);
    probe[i] = orig - eps;
    const double down = eval(probe);
    probe[i] = orig;
    const double err = relative_error(analytic[i], (up - down) / (2.0 * eps));
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst = "x[" + std::to_string(i) + "]";
    }
    ++result.coordinates;
  }
  return result;
}

GradCheckResult grad_check_params(const LossFn& loss, const ParamList& params, double eps,
                                  std::size_t max_coords_per_param, std::uint64_t seed) {
  check_eps(eps);
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var y = loss(tape);
    if (y.value().size() != 1) throw UsageError("grad_check: loss must be scalar-valued");
    finite_or_throw(y.value().item());
    tape.backward(y);
  }
  auto eval = [&] {
    Tape tape(TapeOptions{.grad_enabled = false});
    return finite_or_throw(loss(tape).value().item());
  };

  Rng rng(seed);
  GradCheckResult result;
  for (Parameter* p : params) {
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_param > 0 && coords.size() > max_coords_per_param) {
      for (std::size_t i = 0; i < max_coords_per_param; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(max_coords_per_param);
    }
    for (std::size_t c : coords) {
      const double orig = p->value[c];
      p->value[c] = orig + eps;
      const double up = eval();
      p->value[c] = orig - eps;
      const double down = eval();
      p->value[c] = orig;
      const double analytic = p->grad.empty() ? 0.0 : p->grad[c];
      const double err = relative_error(analytic, (up - down) / (2.0 * eps));
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = p->name + "[" + std::to_string(c) + "]";
      }
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace muser::num
