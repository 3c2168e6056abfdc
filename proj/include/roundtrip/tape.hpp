#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "roundtrip/tensor.hpp"

namespace roundtrip::ad {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Owns parameters in insertion order. Addresses are stable.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t count() const { return params_.size(); }
  /// Total number of trainable scalars.
  std::size_t scalar_count() const;

  void zero_grad();
  Real grad_norm() const;
  void scale_grad(Real factor);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }

  const Tensor& value() const;
  /// Gradient after backward; empty tensor when none reached this node.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class GradMode { enabled, disabled };

/// Reverse-mode tape. Nodes are appended in execution order, which is a
/// topological order, so backward walks them in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(GradMode mode = GradMode::enabled) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return mode_ == GradMode::enabled; }

  Var constant(Tensor value);
  Var variable(Tensor value);  // leaf that collects a gradient
  /// Leaf bound to a parameter; the same parameter always maps to one node.
  Var param(Parameter& p);

  /// Records an op output. `inputs` decide whether the node requires grad;
  /// `fn` is dropped when none of them do.
  Var record(Tensor value, std::vector<std::uint32_t> inputs, BackwardFn fn);

  /// Seeds d(loss)/d(loss) = 1, runs all backward closures in reverse tape
  /// order, then adds leaf gradients into their bound parameters.
  void backward(Var loss);
  void clear();

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::uint32_t>& inputs(std::uint32_t id) const { return nodes_[id].inputs; }
  /// Gradient buffer of an input, allocated on first use.
  Tensor& grad_buffer(std::uint32_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  GradMode mode_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> param_nodes_;
};

}  // namespace roundtrip::ad
