#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "abmil/errors.hpp"
#include "abmil/tape.hpp"
#include "kernels.hpp"

namespace abmil::graph {

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_str(t.shape()));
}

Tape* shared_tape(std::initializer_list<const Var*> vars) {
  Tape* tape = nullptr;
  for (const Var* v : vars) {
    if (!v->tracked()) continue;
    if (tape && v->tape() != tape) throw std::logic_error("operation mixes vars from different tapes");
    tape = v->tape();
  }
  return tape;
}

// Fresh node with the inputs bound to `tape`.
Node make_node(Tape& tape, OpKind op, std::initializer_list<const Var*> inputs) {
  Node n;
  n.op = op;
  for (const Var* v : inputs) {
    n.inputs.push_back(tape.bind(*v));
    n.input_shapes.push_back(v->shape());
    n.requires_grad = n.requires_grad || v->requires_grad();
  }
  n.saved.resize(inputs.size());
  return n;
}

bool aliases_parameter(const Tape& tape, NodeId id) {
  const Node& n = tape.node(id);
  return n.op == OpKind::Leaf && n.leaf == LeafKind::Parameter;
}

Saved keep_input(const Tape& tape, NodeId id, const Tensor& value) {
  return Saved{value, !aliases_parameter(tape, id)};
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// Unary elementwise op whose backward rule needs only its output.
template <typename F>
Var unary_keep_output(OpKind op, const Var& a, F f) {
  Tensor y = map(a.value(), f);
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, op, {&a});
  if (n.requires_grad) n.saved[0] = Saved{y, true};
  return tape->record(std::move(n), std::move(y));
}

}  // namespace

// Retains b when a needs a gradient and a when b does.
Var matmul(const Var& a, const Var& b) {
  require_matrix("matmul", a.value());
  require_matrix("matmul", b.value());
  if (a.value().cols() != b.value().rows()) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor y = kernels::matmul(a.value(), b.value());
  Tape* tape = shared_tape({&a, &b});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::MatMul, {&a, &b});
  if (b.requires_grad()) n.saved[0] = keep_input(*tape, n.inputs[0], a.value());
  if (a.requires_grad()) n.saved[1] = keep_input(*tape, n.inputs[1], b.value());
  return tape->record(std::move(n), std::move(y));
}

Var transpose(const Var& a) {
  require_matrix("transpose", a.value());
  Tensor y = kernels::transpose(a.value());
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  return tape->record(make_node(*tape, OpKind::Transpose, {&a}), std::move(y));
}

Var add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y = av;
  if (av.shape() == bv.shape()) {
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bv[i];
  } else if (av.rank() == 2 && bv.rank() == 2 && bv.rows() == 1 && bv.cols() == av.cols()) {
    const std::size_t m = av.rows(), c = av.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < c; ++j) y(i, j) += bv[j];
  } else {
    shape_mismatch("add", av.shape(), bv.shape());
  }
  Tape* tape = shared_tape({&a, &b});
  if (!tape) return Var(std::move(y));
  return tape->record(make_node(*tape, OpKind::Add, {&a, &b}), std::move(y));
}

Var mul(const Var& a, const Var& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= b.value()[i];
  Tape* tape = shared_tape({&a, &b});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::Mul, {&a, &b});
  if (b.requires_grad()) n.saved[0] = keep_input(*tape, n.inputs[0], a.value());
  if (a.requires_grad()) n.saved[1] = keep_input(*tape, n.inputs[1], b.value());
  return tape->record(std::move(n), std::move(y));
}

Var scale(const Var& a, double factor) {
  Tensor y = map(a.value(), [factor](double v) { return v * factor; });
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::Scale, {&a});
  n.attr = factor;
  return tape->record(std::move(n), std::move(y));
}

Var tanh(const Var& a) {
  return unary_keep_output(OpKind::Tanh, a, [](double v) { return std::tanh(v); });
}

Var relu(const Var& a) {
  return unary_keep_output(OpKind::Relu, a, [](double v) { return v > 0.0 ? v : 0.0; });
}

Var sigmoid(const Var& a) {
  return unary_keep_output(OpKind::Sigmoid, a, [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

Var softmax(const Var& a, std::size_t axis) {
  if (axis >= a.value().rank() && !(axis == 0 && a.value().rank() == 0)) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for shape " + shape_str(a.shape()));
  }
  Tensor y(a.shape());
  if (a.value().rank() == 0) {
    y[0] = 1.0;
  } else {
    const auto [outer, len, inner] = kernels::axis_extents(a.shape(), axis);
    const auto x = a.value().data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double mx = x[base];
        for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
        double total = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
          const double e = std::exp(x[base + l * inner] - mx);
          y[base + l * inner] = e;
          total += e;
        }
        for (std::size_t l = 0; l < len; ++l) y[base + l * inner] /= total;
      }
    }
  }
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::Softmax, {&a});
  n.axis = axis;
  if (n.requires_grad) n.saved[0] = Saved{y, true};
  return tape->record(std::move(n), std::move(y));
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Tensor y = Tensor::scalar(s);
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  return tape->record(make_node(*tape, OpKind::Sum, {&a}), std::move(y));
}

Var mean(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  Tensor y = Tensor::scalar(s / static_cast<double>(a.value().numel()));
  Tape* tape = shared_tape({&a});
  if (!tape) return Var(std::move(y));
  return tape->record(make_node(*tape, OpKind::Mean, {&a}), std::move(y));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Tensor& first = parts.front().value();
  require_matrix("concat_rows", first);
  const std::size_t c = first.cols();
  std::size_t rows = 0;
  Tape* tape = nullptr;
  for (const Var& p : parts) {
    require_matrix("concat_rows", p.value());
    if (p.value().cols() != c) shape_mismatch("concat_rows", first.shape(), p.shape());
    rows += p.value().rows();
    if (p.tracked()) {
      if (tape && p.tape() != tape) throw std::logic_error("operation mixes vars from different tapes");
      tape = p.tape();
    }
  }
  std::vector<double> data;
  data.reserve(rows * c);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  Tensor y({rows, c}, std::move(data));
  if (!tape) return Var(std::move(y));
  Node n;
  n.op = OpKind::ConcatRows;
  for (const Var& p : parts) {
    n.inputs.push_back(tape->bind(p));
    n.input_shapes.push_back(p.shape());
    n.requires_grad = n.requires_grad || p.requires_grad();
  }
  n.saved.resize(parts.size());
  return tape->record(std::move(n), std::move(y));
}

// Saved slots: 0 = normalized input, 1 = per-column 1/sqrt(var+eps), 2 = gamma.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps, BatchStats* stats) {
  require_matrix("batch_norm_train", x.value());
  const std::size_t k = x.value().rows(), c = x.value().cols();
  const Shape row{1, c};
  if (gamma.shape() != row) shape_mismatch("batch_norm_train", x.shape(), gamma.shape());
  if (beta.shape() != row) shape_mismatch("batch_norm_train", x.shape(), beta.shape());

  const Tensor& xv = x.value();
  Tensor mu(row), var(row), inv_std(row), xhat({k, c}), y({k, c});
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += xv(i, j);
    mu[j] = s / static_cast<double>(k);
    double v = 0.0;
    for (std::size_t i = 0; i < k; ++i) v += (xv(i, j) - mu[j]) * (xv(i, j) - mu[j]);
    var[j] = v / static_cast<double>(k);
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < k; ++i) {
      xhat(i, j) = (xv(i, j) - mu[j]) * inv_std[j];
      y(i, j) = gamma.value()[j] * xhat(i, j) + beta.value()[j];
    }
  }
  if (stats) *stats = BatchStats{mu, var};

  Tape* tape = shared_tape({&x, &gamma, &beta});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::BatchNormTrain, {&x, &gamma, &beta});
  n.attr = eps;
  if (gamma.requires_grad() || x.requires_grad()) n.saved[0] = Saved{std::move(xhat), true};
  if (x.requires_grad()) {
    n.saved[1] = Saved{std::move(inv_std), true};
    n.saved[2] = keep_input(*tape, n.inputs[1], gamma.value());
  }
  return tape->record(std::move(n), std::move(y));
}

// Saved slots: 0 = normalized input, 1 = per-column gamma/sqrt(var+eps).
Var batch_norm_infer(const Var& x, const Var& gamma, const Var& beta, const Tensor& mean, const Tensor& variance,
                     double eps) {
  require_matrix("batch_norm_infer", x.value());
  const std::size_t k = x.value().rows(), c = x.value().cols();
  const Shape row{1, c};
  for (const Shape* s : {&gamma.shape(), &beta.shape(), &mean.shape(), &variance.shape()}) {
    if (*s != row) shape_mismatch("batch_norm_infer", x.shape(), *s);
  }
  const Tensor& xv = x.value();
  Tensor xhat({k, c}), y({k, c}), slope(row);
  for (std::size_t j = 0; j < c; ++j) {
    const double inv = 1.0 / std::sqrt(variance[j] + eps);
    slope[j] = gamma.value()[j] * inv;
    for (std::size_t i = 0; i < k; ++i) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv;
      y(i, j) = gamma.value()[j] * xhat(i, j) + beta.value()[j];
    }
  }
  Tape* tape = shared_tape({&x, &gamma, &beta});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::BatchNormInfer, {&x, &gamma, &beta});
  n.attr = eps;
  if (gamma.requires_grad()) n.saved[0] = Saved{std::move(xhat), true};
  if (x.requires_grad()) n.saved[1] = Saved{std::move(slope), true};
  return tape->record(std::move(n), std::move(y));
}

Var binary_cross_entropy(const Var& p, double label) {
  if (p.value().numel() != 1) {
    throw ShapeError("binary_cross_entropy: expected a single score, got shape " + shape_str(p.shape()));
  }
  const double q = std::clamp(p.value()[0], kBceClamp, 1.0 - kBceClamp);
  Tensor y = Tensor::scalar(-(label * std::log(q) + (1.0 - label) * std::log(1.0 - q)));
  Tape* tape = shared_tape({&p});
  if (!tape) return Var(std::move(y));
  Node n = make_node(*tape, OpKind::BinaryCrossEntropy, {&p});
  n.attr = label;
  if (n.requires_grad) n.saved[0] = Saved{p.value(), true};
  return tape->record(std::move(n), std::move(y));
}

}  // namespace abmil::graph
