#include "muser/numerics/tape.hpp"

#include <mutex>
#include <set>

#include "muser/error.hpp"

namespace muser::num {

namespace {

std::set<std::string, std::less<>>& registry() {
  static std::set<std::string, std::less<>> names;
  return names;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

bool is_registered_primitive(std::string_view op) {
  std::lock_guard lock(registry_mutex());
  return registry().contains(op);
}

void register_primitive(std::string_view op) {
  std::lock_guard lock(registry_mutex());
  registry().emplace(op);
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Tape::Tape(TapeOptions options, std::uint64_t dropout_seed) : options_(options), rng_(dropout_seed) {}

Var Tape::leaf(Tensor value, bool requires_grad) {
  auto& r = records_.emplace_back();
  r.value = std::move(value);
  r.op = "leaf";
  r.is_leaf = true;
  r.requires_grad = requires_grad && options_.grad_enabled;
  return {this, static_cast<std::uint32_t>(records_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_ids_.find(&p); it != param_ids_.end()) return {this, it->second};
  auto& r = records_.emplace_back();
  r.op = "param";
  r.is_leaf = true;
  r.requires_grad = options_.grad_enabled;
  r.param = &p;
  auto id = static_cast<std::uint32_t>(records_.size() - 1);
  param_ids_.emplace(&p, id);
  return {this, id};
}

Var Tape::record(std::string_view op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto& r = records_.emplace_back();
  r.value = std::move(value);
  r.op = std::string(op);
  if (options_.grad_enabled) {
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw UsageError("tape: input recorded on a different tape");
      r.inputs.push_back(v.id());
      r.requires_grad = r.requires_grad || records_[v.id()].requires_grad;
    }
    if (r.requires_grad) r.backward = std::move(backward);
  }
  return {this, static_cast<std::uint32_t>(records_.size() - 1)};
}

const Tensor& Tape::grad(std::uint32_t id) const {
  const auto& r = records_.at(id);
  if (r.param != nullptr) return r.param->grad;
  return r.grad;
}

Tensor* Tape::grad_slot(std::uint32_t id) {
  auto& r = records_[id];
  if (!r.requires_grad) return nullptr;
  Tensor& g = r.param != nullptr ? r.param->grad : r.grad;
  const Tensor& v = r.param != nullptr ? r.param->value : r.value;
  if (!g.same_shape(v)) g = Tensor::zeros_like(v);
  return &g;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw UsageError("backward: loss belongs to a different tape");
  const auto root = loss.id();
  auto& lr = records_.at(root);
  if (value(root).size() != 1) {
    throw UsageError("backward: loss must be scalar, got shape " + value(root).shape_string());
  }
  if (!lr.requires_grad) return;

  for (std::uint32_t i = 0; i <= root; ++i) {
    auto& r = records_[i];
    if (!r.is_leaf && r.requires_grad) r.grad = Tensor::zeros_like(r.value);
  }
  if (lr.is_leaf) {
    grad_slot(root)->storage()[0] += 1.0;
    return;
  }
  lr.grad.storage()[0] = 1.0;

  for (std::uint32_t i = root + 1; i-- > 0;) {
    auto& r = records_[i];
    if (r.is_leaf || !r.requires_grad) continue;
    if (!r.backward || !is_registered_primitive(r.op)) {
      throw UsageError("backward: tape contains unregistered primitive '" + r.op + "'");
    }
    r.backward(*this, i);
  }
}

}  // namespace muser::num
