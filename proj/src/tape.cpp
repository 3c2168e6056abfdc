#include "roundtrip/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace roundtrip::ad {

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->grad = Tensor(init.shape());
  p->value = std::move(init);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0);
}

Real ParameterStore::grad_norm() const {
  Real total = 0;
  for (const auto& p : params_) {
    for (Real g : p->grad.values()) total += g * g;
  }
  return std::sqrt(total);
}

void ParameterStore::scale_grad(Real factor) {
  for (auto& p : params_) {
    for (Real& g : p->grad.values()) g *= factor;
  }
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::variable(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = grad_enabled();
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node node;
  node.value = p.value;
  node.requires_grad = grad_enabled();
  node.param = &p;
  nodes_.push_back(std::move(node));
  auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Var Tape::record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled()) {
    for (auto id : inputs) node.requires_grad = node.requires_grad || nodes_[id].requires_grad;
  }
  if (node.requires_grad) {
    node.inputs = std::move(inputs);
    node.backward = std::move(fn);
  }
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw std::logic_error("backward called on an empty tape");
  if (&loss.tape() != this) throw std::invalid_argument("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  for (auto& node : nodes_) node.grad = Tensor();
  grad_buffer(loss.id())[0] = 1;
  for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    // Closures only touch existing nodes, so nodes_ is never resized here.
    if (node.backward) node.backward(*this, i);
  }
  for (auto& node : nodes_) {
    if (node.param == nullptr || node.grad.empty()) continue;
    auto& target = node.param->grad;
    if (target.shape() != node.grad.shape()) target = Tensor(node.grad.shape());
    for (std::size_t k = 0; k < target.size(); ++k) target[k] += node.grad[k];
  }
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
}

}  // namespace roundtrip::ad
