#include <optional>
#include <vector>

#include "abmil/errors.hpp"
#include "abmil/tape.hpp"
#include "kernels.hpp"

namespace abmil::graph {

namespace {

using GradSlots = std::vector<std::optional<Tensor>>;

void accumulate(const Tape& tape, GradSlots& slots, NodeId id, Tensor g) {
  if (!tape.node(id).requires_grad) return;
  auto& slot = slots[id];
  if (!slot) {
    slot = std::move(g);
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) (*slot)[i] += g[i];
}

const Tensor& saved(const Node& n, std::size_t slot) {
  if (slot >= n.saved.size() || !n.saved[slot]) {
    throw std::logic_error(std::string(op_name(n.op)) + ": backward needs a value that was not retained");
  }
  return n.saved[slot]->value;
}

bool wants(const Tape& tape, const Node& n, std::size_t input) { return tape.node(n.inputs[input]).requires_grad; }

Tensor column_sums(const Tensor& g) {
  const std::size_t m = g.rows(), c = g.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += g(i, j);
  return out;
}

void propagate(const Tape& tape, const Node& n, const Tensor& g, GradSlots& slots) {
  switch (n.op) {
    case OpKind::Leaf:
      return;
    case OpKind::MatMul: {
      if (wants(tape, n, 0)) accumulate(tape, slots, n.inputs[0], kernels::matmul_nt(g, saved(n, 1)));
      if (wants(tape, n, 1)) accumulate(tape, slots, n.inputs[1], kernels::matmul_tn(saved(n, 0), g));
      return;
    }
    case OpKind::Transpose:
      accumulate(tape, slots, n.inputs[0], kernels::transpose(g));
      return;
    case OpKind::Add: {
      if (wants(tape, n, 0)) accumulate(tape, slots, n.inputs[0], g);
      if (wants(tape, n, 1)) {
        if (n.input_shapes[1] == g.shape()) {
          accumulate(tape, slots, n.inputs[1], g);
        } else {
          accumulate(tape, slots, n.inputs[1], column_sums(g));
        }
      }
      return;
    }
    case OpKind::Mul: {
      if (wants(tape, n, 0)) {
        Tensor d = g;
        const Tensor& b = saved(n, 1);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= b[i];
        accumulate(tape, slots, n.inputs[0], std::move(d));
      }
      if (wants(tape, n, 1)) {
        Tensor d = g;
        const Tensor& a = saved(n, 0);
        for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= a[i];
        accumulate(tape, slots, n.inputs[1], std::move(d));
      }
      return;
    }
    case OpKind::Scale: {
      Tensor d = g;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= n.attr;
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
    case OpKind::Tanh: {
      const Tensor& y = saved(n, 0);
      Tensor d = g;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 1.0 - y[i] * y[i];
#ifdef ABMIL_FAULT_INJECTION
      // Deliberately wrong rule; the verification suites must catch it.
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 1.01;
#endif
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
    case OpKind::Relu: {
      const Tensor& y = saved(n, 0);
      Tensor d = g;
      for (std::size_t i = 0; i < d.numel(); ++i)
        if (!(y[i] > 0.0)) d[i] = 0.0;
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
    case OpKind::Sigmoid: {
      const Tensor& y = saved(n, 0);
      Tensor d = g;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= y[i] * (1.0 - y[i]);
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
    case OpKind::Softmax: {
      // a * (g - <g, a>) along the axis.
      const Tensor& a = saved(n, 0);
      Tensor d(a.shape());
      if (a.rank() == 0) {
        accumulate(tape, slots, n.inputs[0], std::move(d));
        return;
      }
      const auto [outer, len, inner] = kernels::axis_extents(a.shape(), n.axis);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * a[base + l * inner];
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t idx = base + l * inner;
            d[idx] = a[idx] * (g[idx] - dot);
          }
        }
      }
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
    case OpKind::Sum:
      accumulate(tape, slots, n.inputs[0], Tensor(n.input_shapes[0], g[0]));
      return;
    case OpKind::Mean:
      accumulate(tape, slots, n.inputs[0],
                 Tensor(n.input_shapes[0], g[0] / static_cast<double>(shape_numel(n.input_shapes[0]))));
      return;
    case OpKind::ConcatRows: {
      std::size_t row = 0;
      for (std::size_t p = 0; p < n.inputs.size(); ++p) {
        const std::size_t rows = n.input_shapes[p][0];
        if (wants(tape, n, p)) accumulate(tape, slots, n.inputs[p], g.rows_slice(row, row + rows));
        row += rows;
      }
      return;
    }
    case OpKind::BatchNormTrain: {
      const std::size_t k = g.rows(), c = g.cols();
      const double kd = static_cast<double>(k);
      if (wants(tape, n, 2)) accumulate(tape, slots, n.inputs[2], column_sums(g));
      if (wants(tape, n, 1)) {
        const Tensor& xhat = saved(n, 0);
        Tensor dgamma({1, c});
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < c; ++j) dgamma[j] += g(i, j) * xhat(i, j);
        accumulate(tape, slots, n.inputs[1], std::move(dgamma));
      }
      if (wants(tape, n, 0)) {
        const Tensor& xhat = saved(n, 0);
        const Tensor& inv_std = saved(n, 1);
        const Tensor& gamma = saved(n, 2);
        Tensor dx({k, c});
        for (std::size_t j = 0; j < c; ++j) {
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t i = 0; i < k; ++i) {
            const double dxhat = g(i, j) * gamma[j];
            sum_d += dxhat;
            sum_dx += dxhat * xhat(i, j);
          }
          for (std::size_t i = 0; i < k; ++i) {
            const double dxhat = g(i, j) * gamma[j];
            dx(i, j) = inv_std[j] / kd * (kd * dxhat - sum_d - xhat(i, j) * sum_dx);
          }
        }
        accumulate(tape, slots, n.inputs[0], std::move(dx));
      }
      return;
    }
    case OpKind::BatchNormInfer: {
      const std::size_t k = g.rows(), c = g.cols();
      if (wants(tape, n, 2)) accumulate(tape, slots, n.inputs[2], column_sums(g));
      if (wants(tape, n, 1)) {
        const Tensor& xhat = saved(n, 0);
        Tensor dgamma({1, c});
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < c; ++j) dgamma[j] += g(i, j) * xhat(i, j);
        accumulate(tape, slots, n.inputs[1], std::move(dgamma));
      }
      if (wants(tape, n, 0)) {
        const Tensor& slope = saved(n, 1);
        Tensor dx = g;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < c; ++j) dx(i, j) *= slope[j];
        accumulate(tape, slots, n.inputs[0], std::move(dx));
      }
      return;
    }
    case OpKind::BinaryCrossEntropy: {
      const Tensor& p = saved(n, 0);
      const double y = n.attr;
      const double q = p[0];
      Tensor d(p.shape());
      // Zero derivative where the clamp is active.
      if (q > kBceClamp && q < 1.0 - kBceClamp) d[0] = g[0] * (-(y / q) + (1.0 - y) / (1.0 - q));
      accumulate(tape, slots, n.inputs[0], std::move(d));
      return;
    }
  }
}

}  // namespace

Gradients backward(const Tape& tape, const Var& loss) {
  if (loss.tape() != &tape) throw std::logic_error("backward: loss is not recorded on this tape");
  if (loss.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const NodeId root = loss.node();
  GradSlots slots(root + 1);
  slots[root] = Tensor(loss.shape(), 1.0);

  // Reverse index order is reverse topological order: every consumer of a
  // node has a larger id, so its gradient is complete when visited.
  for (NodeId id = root + 1; id-- > 0;) {
    if (!slots[id]) continue;
    const Node& n = tape.node(id);
    if (n.op == OpKind::Leaf || !n.requires_grad) continue;
    propagate(tape, n, *slots[id], slots);
    slots[id].reset();
  }

  Gradients out;
  for (NodeId id = 0; id < tape.size(); ++id) {
    const Node& n = tape.node(id);
    if (n.op != OpKind::Leaf || n.leaf == LeafKind::Constant) continue;
    if (id <= root && slots[id]) {
      out.grads_.emplace(id, std::move(*slots[id]));
    } else {
      out.grads_.emplace(id, Tensor(n.shape));
    }
  }
  return out;
}

}  // namespace abmil::graph
