#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abmil/tensor.hpp"

namespace abmil::graph {

/// How a leaf participates in differentiation. Constants never receive a
/// gradient; they are how cached features are injected into a live graph.
enum class LeafKind : std::uint8_t { Parameter, DifferentiableInput, Constant };

/// Attribution bucket for retained-memory accounting.
enum class Region : std::uint8_t { Encoder, Pooler, Loss, Other };
inline constexpr std::size_t kRegionCount = 4;

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Transpose,
  Add,
  Mul,
  Scale,
  Tanh,
  Relu,
  Sigmoid,
  Softmax,
  Sum,
  Mean,
  ConcatRows,
  BatchNormTrain,
  BatchNormInfer,
  BinaryCrossEntropy,
};

const char* op_name(OpKind op);

using NodeId = std::size_t;

class Tape;

/// A value, optionally bound to a node on a tape.
///
/// Untracked vars are plain values; operations on them compute without
/// recording. The tape a var points at must outlive it.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value) : value_(std::move(value)) {}

  const Tensor& value() const noexcept { return value_; }
  const Shape& shape() const noexcept { return value_.shape(); }
  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  NodeId node() const noexcept { return node_; }
  bool requires_grad() const noexcept { return requires_grad_; }

 private:
  friend class Tape;
  Var(Tensor value, Tape* tape, NodeId node, bool requires_grad)
      : value_(std::move(value)), tape_(tape), node_(node), requires_grad_(requires_grad) {}

  Tensor value_;
  Tape* tape_ = nullptr;
  NodeId node_ = 0;
  bool requires_grad_ = false;
};

/// A forward value kept for the backward pass. `counted` is false when the
/// slot aliases a Parameter leaf, whose storage belongs to the parameter set
/// rather than to the activation cache.
struct Saved {
  Tensor value;
  bool counted = true;
};

struct Node {
  OpKind op = OpKind::Leaf;
  LeafKind leaf = LeafKind::Constant;
  Region region = Region::Other;
  bool requires_grad = false;
  Shape shape;
  std::vector<NodeId> inputs;
  std::vector<Shape> input_shapes;
  std::vector<std::optional<Saved>> saved;
  double attr = 0.0;
  std::size_t axis = 0;
  std::string name;
};

/// Append-only record of a forward computation.
///
/// Nodes only reference earlier nodes, so index order is a topological order.
/// Each op declares which forward values its backward rule keeps; the sum of
/// their element counts is `retained_scalars()`, the activation-memory metric.
/// Recorded values are never mutated, so `backward` can be rerun.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var leaf(Tensor value, LeafKind kind, std::string name = {});
  Var parameter(Tensor value, std::string name = {}) { return leaf(std::move(value), LeafKind::Parameter, std::move(name)); }
  Var input(Tensor value, std::string name = {}) {
    return leaf(std::move(value), LeafKind::DifferentiableInput, std::move(name));
  }
  Var constant(Tensor value, std::string name = {}) { return leaf(std::move(value), LeafKind::Constant, std::move(name)); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }

  std::size_t retained_scalars() const noexcept { return retained_; }
  std::size_t retained_scalars(Region region) const noexcept { return retained_by_region_[index(region)]; }
  /// Maximum of retained_scalars() since construction.
  std::size_t peak_retained_scalars() const noexcept { return peak_; }
  std::size_t peak_retained_scalars(Region region) const noexcept { return peak_by_region_[index(region)]; }

  Region region() const noexcept { return region_; }

  /// Tags nodes recorded during its lifetime with a region.
  class RegionScope {
   public:
    RegionScope(Tape* tape, Region region) : tape_(tape) {
      if (tape_) {
        previous_ = tape_->region_;
        tape_->region_ = region;
      }
    }
    ~RegionScope() {
      if (tape_) tape_->region_ = previous_;
    }
    RegionScope(const RegionScope&) = delete;
    RegionScope& operator=(const RegionScope&) = delete;

   private:
    Tape* tape_;
    Region previous_ = Region::Other;
  };

  // Used by op implementations.
  Var record(Node node, Tensor value);
  /// Returns the var's node on this tape, registering an untracked var as a
  /// Constant leaf. Throws if the var lives on another tape.
  NodeId bind(const Var& v);

 private:
  static constexpr std::size_t index(Region r) noexcept { return static_cast<std::size_t>(r); }

  std::vector<Node> nodes_;
  Region region_ = Region::Other;
  std::size_t retained_ = 0;
  std::size_t peak_ = 0;
  std::array<std::size_t, kRegionCount> retained_by_region_{};
  std::array<std::size_t, kRegionCount> peak_by_region_{};
};

/// Gradients of a scalar with respect to Parameter and DifferentiableInput leaves.
class Gradients {
 public:
  bool contains(const Var& leaf) const { return grads_.contains(leaf.node()); }
  bool contains(NodeId id) const { return grads_.contains(id); }
  const Tensor& at(const Var& leaf) const;
  const Tensor& at(NodeId id) const;
  std::size_t size() const noexcept { return grads_.size(); }

 private:
  friend Gradients backward(const Tape& tape, const Var& loss);
  std::map<NodeId, Tensor> grads_;
};

/// Reverse sweep from a single-element node. Leaves unreachable from the loss
/// get zero gradients; Constant leaves are absent. The tape is not modified.
Gradients backward(const Tape& tape, const Var& loss);

// Operations. Inputs on the same tape (or untracked) only; when any input is
// tracked the result is recorded on that tape.

/// [m,k] x [k,n] -> [m,n].
Var matmul(const Var& a, const Var& b);
/// 2-D transpose.
Var transpose(const Var& a);
/// Elementwise sum; `b` may also be a [1,n] row broadcast over the rows of an [m,n] `a`.
Var add(const Var& a, const Var& b);
/// Elementwise product of equally shaped tensors.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var tanh(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var softmax(const Var& a, std::size_t axis);
/// Sum of all elements, shape [1].
Var sum(const Var& a);
/// Mean of all elements, shape [1].
Var mean(const Var& a);
/// Stacks 2-D parts with equal column counts along the row (instance) axis.
Var concat_rows(std::span<const Var> parts);

/// Per-column batch mean and biased variance, shape [1,n].
struct BatchStats {
  Tensor mean;
  Tensor variance;
};

/// Batch normalization of an [k,n] input using its own column statistics.
/// gamma and beta are [1,n]. Writes the batch statistics to `stats` if given.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats = nullptr);
/// Batch normalization with fixed statistics (inference).
Var batch_norm_infer(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& variance,
                     double eps);

/// -[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1-1e-12]; `p` must
/// hold one element.
Var binary_cross_entropy(const Var& p, double label);

inline constexpr double kBceClamp = 1e-12;

}  // namespace abmil::graph
