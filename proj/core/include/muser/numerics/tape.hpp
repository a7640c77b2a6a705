#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "muser/numerics/tensor.hpp"

namespace muser::num {

enum class Precision { f64, f32 };

/// A trainable array. The tape never owns parameters; it accumulates into
/// `grad` during backward.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() {
    if (grad.same_shape(value)) {
      grad.fill(0.0);
    } else {
      grad = Tensor::zeros_like(value);
    }
  }
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] Tape& tape() const noexcept { return *tape_; }
  [[nodiscard]] std::uint32_t id() const noexcept { return id_; }
  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Tensor& grad() const;
  [[nodiscard]] bool requires_grad() const;
  [[nodiscard]] std::size_t rows() const { return value().rows(); }
  [[nodiscard]] std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

struct TapeOptions {
  bool grad_enabled = true;
  bool training = false;
  Precision precision = Precision::f64;
};

/// Records primitive applications in execution order. Record i only ever
/// references records j < i, so a reverse sweep is a valid backward order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(TapeOptions options = {}, std::uint64_t dropout_seed = 0);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  /// Binds a parameter as a leaf; repeated calls return the same handle.
  Var param(Parameter& p);

  Var record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. Leaf and parameter gradients
  /// accumulate across calls; intermediate gradients are reset each call.
  void backward(Var loss);

  [[nodiscard]] const Tensor& value(std::uint32_t id) const {
    const auto& r = records_.at(id);
    return r.param != nullptr ? r.param->value : r.value;
  }
  [[nodiscard]] const Tensor& grad(std::uint32_t id) const;
  [[nodiscard]] bool requires_grad(std::uint32_t id) const { return records_.at(id).requires_grad; }
  [[nodiscard]] const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return records_.at(id).inputs; }
  [[nodiscard]] std::string_view op(std::uint32_t id) const { return records_.at(id).op; }

  /// Gradient slot of `id` for accumulation, or nullptr when it needs none.
  Tensor* grad_slot(std::uint32_t id);
  [[nodiscard]] const Tensor& out_grad(std::uint32_t id) const { return records_[id].grad; }
  [[nodiscard]] std::uint32_t input(std::uint32_t self, std::size_t k) const { return records_[self].inputs[k]; }

  [[nodiscard]] std::size_t size() const noexcept { return records_.size(); }
  [[nodiscard]] const TapeOptions& options() const noexcept { return options_; }
  [[nodiscard]] bool grad_enabled() const noexcept { return options_.grad_enabled; }
  [[nodiscard]] bool training() const noexcept { return options_.training; }
  [[nodiscard]] Precision precision() const noexcept { return options_.precision; }
  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  struct Record {
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    std::string op;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
    Parameter* param = nullptr;
  };

  std::deque<Record> records_;
  std::unordered_map<const Parameter*, std::uint32_t> param_ids_;
  TapeOptions options_;
  std::mt19937_64 rng_;
};

/// Names of primitives with a registered backward rule.
bool is_registered_primitive(std::string_view op);
void register_primitive(std::string_view op);

}  // namespace muser::num
