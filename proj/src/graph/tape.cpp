#include "abmil/tape.hpp"

#include <algorithm>

#include "abmil/errors.hpp"

namespace abmil::graph {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::BatchNormTrain: return "batch_norm_train";
    case OpKind::BatchNormInfer: return "batch_norm_infer";
    case OpKind::BinaryCrossEntropy: return "binary_cross_entropy";
  }
  return "unknown";
}

Var Tape::leaf(Tensor value, LeafKind kind, std::string name) {
  Node n;
  n.op = OpKind::Leaf;
  n.leaf = kind;
  n.requires_grad = kind != LeafKind::Constant;
  n.name = std::move(name);
  return record(std::move(n), std::move(value));
}

Var Tape::record(Node node, Tensor value) {
  node.region = region_;
  node.shape = value.shape();
  std::size_t added = 0;
  for (const auto& slot : node.saved) {
    if (slot && slot->counted) added += slot->value.numel();
  }
  retained_ += added;
  retained_by_region_[index(region_)] += added;
  peak_ = std::max(peak_, retained_);
  peak_by_region_[index(region_)] = std::max(peak_by_region_[index(region_)], retained_by_region_[index(region_)]);

  const bool requires_grad = node.requires_grad;
  const NodeId id = nodes_.size();
  nodes_.push_back(std::move(node));
  return Var(std::move(value), this, id, requires_grad);
}

NodeId Tape::bind(const Var& v) {
  if (v.tape() == this) return v.node();
  if (v.tracked()) throw std::logic_error("var belongs to a different tape");
  Node n;
  n.op = OpKind::Leaf;
  n.leaf = LeafKind::Constant;
  n.region = region_;
  n.shape = v.shape();
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

const Tensor& Gradients::at(const Var& leaf) const { return at(leaf.node()); }

const Tensor& Gradients::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw std::out_of_range("no gradient recorded for node " + std::to_string(id));
  return it->second;
}

}  // namespace abmil::graph
