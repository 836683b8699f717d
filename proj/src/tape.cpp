#include "occludox/tape.hpp"

#include "occludox/error.hpp"

namespace occludox {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kRelu: return "relu";
    case OpKind::kClip: return "clip";
    case OpKind::kMaxPool2: return "max_pool2";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kDense: return "dense";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
  }
  return "?";
}

const Tensor& Var::value() const { return tape->value(id); }

const Tensor& Gradients::operator[](NodeId id) const {
  if (!has(id)) throw ContractError("no gradient recorded for node " + std::to_string(id));
  return grads_[id];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{OpKind::kLeaf, {}, std::move(value), requires_grad, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind kind, std::vector<NodeId> parents, Tensor value, BackwardFn backward) {
  bool needs = false;
  for (NodeId p : parents) {
    if (p >= nodes_.size()) throw ContractError("parent node recorded after child");
    needs = needs || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(parents), std::move(value), needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(const Var& root) const {
  if (root.tape != this) throw ContractError("root belongs to another tape");
  const Node& r = nodes_.at(root.id);
  if (r.value.size() != 1) {
    throw ContractError("backward needs a scalar root, got dims " + to_string(r.value.dims()));
  }
  std::vector<Tensor> grads(root.id + 1);
  if (!r.requires_grad) return Gradients(std::move(grads));
  grads[root.id] = Tensor(r.value.dims(), 1.0);

  std::vector<Tensor*> slots;
  for (NodeId i = root.id + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!n.requires_grad || n.kind == OpKind::kLeaf || grads[i].dims().empty()) continue;
    slots.assign(n.parents.size(), nullptr);
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      const NodeId p = n.parents[k];
      if (!nodes_[p].requires_grad) continue;
      if (grads[p].dims().empty()) grads[p] = Tensor(nodes_[p].value.dims(), 0.0);
      slots[k] = &grads[p];
    }
    n.backward(grads[i], slots);
  }
  return Gradients(std::move(grads));
}

}  // namespace occludox
