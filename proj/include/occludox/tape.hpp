#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kClip,
  kMaxPool2,
  kFlatten,
  kDense,
  kConv2d,
  kCrossEntropy,
  kSum,
  kMean,
};

const char* to_string(OpKind kind);

using NodeId = std::size_t;

class Tape;

/// Handle to a node on a tape. Valid as long as the tape lives.
struct Var {
  Tape* tape = nullptr;
  NodeId id = 0;

  const Tensor& value() const;
};

/// Receives the output gradient and adds into the gradients of each parent.
/// A parent slot is null when that parent does not need a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> parent_grads)>;

/// Gradients produced by one backward pass, indexed by node id.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}

  bool has(NodeId id) const { return id < grads_.size() && !grads_[id].dims().empty(); }
  const Tensor& operator[](NodeId id) const;
  const Tensor& of(const Var& v) const { return (*this)[v.id]; }

 private:
  std::vector<Tensor> grads_;
};

/// Records a computation eagerly, node by node, for reverse-mode
/// differentiation. Parents always have smaller ids than their children.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = false);
  Var record(OpKind kind, std::vector<NodeId> parents, Tensor value, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  std::span<const NodeId> parents(NodeId id) const { return nodes_.at(id).parents; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }

  /// d root / d node for every node that requires a gradient. Nodes are
  /// visited once each, in descending id order. Root must hold one element.
  Gradients backward(const Var& root) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> parents;
    Tensor value;
    bool requires_grad;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace occludox
