#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "abmil/errors.hpp"
#include "abmil/tape.hpp"
#include "support.hpp"

namespace abmil::graph {
namespace {

using testing::fd_error;
using testing::numeric_grad;
using testing::random_tensor;

TEST(Tensor, RejectsZeroDimensionAndLengthMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Tensor, RowsSliceAndGather) {
  const Tensor t = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(t.rows_slice(1, 3), Tensor::matrix({{3, 4}, {5, 6}}));
  const std::vector<std::size_t> idx{2, 0};
  EXPECT_EQ(t.gather_rows(idx), Tensor::matrix({{5, 6}, {1, 2}}));
}

TEST(Tensor, RelativeL2) {
  const Tensor a = Tensor::vector({3, 4});
  const Tensor b = Tensor::vector({3, 4});
  EXPECT_EQ(relative_l2(a, b), 0.0);
  EXPECT_DOUBLE_EQ(relative_l2(a, Tensor::vector({0, 0})), 1.0);
  EXPECT_EQ(relative_l2(Tensor::vector({0, 0}), Tensor::vector({0, 0})), 0.0);
}

TEST(Ops, MatmulHandExample) {
  const Var c = matmul(Var(Tensor::matrix({{1, 2}, {3, 4}})), Var(Tensor::matrix({{1}, {1}})));
  EXPECT_EQ(c.value(), Tensor::matrix({{3}, {7}}));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const Var s = softmax(Var(Tensor::vector({0, 0, 0})), 0);
  for (double v : s.value().data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, SoftmaxAlongEachAxis) {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 5}});
  const Tensor rows = softmax(Var(x), 0).value();
  EXPECT_NEAR(rows(0, 0) + rows(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(rows(0, 1) + rows(1, 1), 1.0, 1e-15);
  const Tensor cols = softmax(Var(x), 1).value();
  EXPECT_NEAR(cols(0, 0) + cols(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(cols(0, 1) / cols(0, 0), std::exp(1.0), 1e-12);
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  const Tensor s = softmax(Var(Tensor::vector({1000, 1000})), 0).value();
  EXPECT_DOUBLE_EQ(s[0], 0.5);
}

TEST(Ops, TanhOfZero) { EXPECT_EQ(tanh(Var(Tensor::scalar(0.0))).value().item(), 0.0); }

TEST(Ops, AddBroadcastsRowOverInstances) {
  const Var y = add(Var(Tensor::matrix({{1, 2}, {3, 4}})), Var(Tensor::matrix({{10, 20}})));
  EXPECT_EQ(y.value(), Tensor::matrix({{11, 22}, {13, 24}}));
}

TEST(Ops, ConcatRows) {
  const std::vector<Var> parts{Var(Tensor::matrix({{1, 2}})), Var(Tensor::matrix({{3, 4}, {5, 6}}))};
  EXPECT_EQ(concat_rows(parts).value(), Tensor::matrix({{1, 2}, {3, 4}, {5, 6}}));
}

TEST(Ops, ShapeErrorNamesOperationAndShapes) {
  try {
    matmul(Var(Tensor({2, 3})), Var(Tensor({2, 3})));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
  }
  EXPECT_THROW(add(Var(Tensor({2, 3})), Var(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(mul(Var(Tensor({2})), Var(Tensor({3}))), ShapeError);
  const std::vector<Var> ragged{Var(Tensor({1, 2})), Var(Tensor({1, 3}))};
  EXPECT_THROW(concat_rows(ragged), ShapeError);
}

TEST(Ops, BatchNormTrainOnIdenticalRowsIsZero) {
  const Tensor x = Tensor::matrix({{0.7, -2.0, 3.0}, {0.7, -2.0, 3.0}});
  const Var gamma(Tensor({1, 3}, 1.0));
  const Var beta(Tensor({1, 3}, 0.0));
  BatchStats stats;
  const Tensor y = batch_norm_train(Var(x), gamma, beta, 1e-5, &stats).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
  EXPECT_DOUBLE_EQ(stats.mean(0, 1), -2.0);
  EXPECT_EQ(stats.variance(0, 1), 0.0);
}

TEST(Ops, BatchNormTrainMatchesHandFormula) {
  const Tensor x = Tensor::matrix({{1.0}, {2.0}, {4.0}});
  const double mu = 7.0 / 3.0;
  const double var = ((1 - mu) * (1 - mu) + (2 - mu) * (2 - mu) + (4 - mu) * (4 - mu)) / 3.0;
  const Tensor y =
      batch_norm_train(Var(x), Var(Tensor::matrix({{2.0}})), Var(Tensor::matrix({{0.5}})), 1e-5).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 2.0 * (x[i] - mu) / std::sqrt(var + 1e-5) + 0.5, 1e-14);
}

TEST(Ops, BinaryCrossEntropyClamps) {
  EXPECT_NEAR(binary_cross_entropy(Var(Tensor::scalar(0.5)), 1.0).value().item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(binary_cross_entropy(Var(Tensor::scalar(0.0)), 1.0).value().item(), -std::log(kBceClamp), 1e-9);
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(Var(Tensor::scalar(1.0)), 0.0).value().item()));
}

TEST(Backward, LinearFunction) {
  Tape tape;
  Var w = tape.parameter(Tensor::vector({2, 3}), "w");
  Var x = tape.constant(Tensor::vector({5, 7}), "x");
  const auto g = backward(tape, sum(mul(w, x)));
  EXPECT_EQ(g.at(w), Tensor::vector({5, 7}));
  EXPECT_FALSE(g.contains(x));
}

TEST(Backward, ZeroUpstreamWeightGivesZeroGradient) {
  Tape tape;
  Var z = tape.parameter(Tensor::scalar(0.0), "z");
  Var w = tape.constant(Tensor::scalar(0.0), "w");
  const auto g = backward(tape, sum(mul(sigmoid(z), w)));
  EXPECT_EQ(g.at(z).item(), 0.0);
}

TEST(Backward, NonScalarLossThrows) {
  Tape tape;
  Var a = tape.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(backward(tape, tanh(a)), ShapeError);
}

TEST(Backward, UnreachableLeafGetsZeros) {
  Tape tape;
  Var a = tape.parameter(Tensor::vector({1, 2}), "a");
  Var unused = tape.parameter(Tensor::matrix({{1, 2}, {3, 4}}), "unused");
  const auto g = backward(tape, sum(a));
  EXPECT_EQ(g.at(unused), Tensor({2, 2}, 0.0));
}

TEST(Backward, TapeIsRerunnable) {
  Tape tape;
  Var a = tape.parameter(Tensor::vector({0.3, -1.2, 2.0}));
  Var loss = sum(mul(tanh(a), sigmoid(a)));
  const auto first = backward(tape, loss);
  const auto second = backward(tape, loss);
  EXPECT_EQ(first.at(a), second.at(a));
}

TEST(Backward, GradientsReachEveryDifferentiableLeafWithItsShape) {
  std::mt19937_64 rng(3);
  Tape tape;
  Var x = tape.input(random_tensor({4, 3}, rng));
  Var w = tape.parameter(random_tensor({3, 2}, rng));
  Var b = tape.parameter(random_tensor({1, 2}, rng));
  const auto g = backward(tape, mean(relu(add(matmul(x, w), b))));
  EXPECT_EQ(g.size(), 3u);
  EXPECT_EQ(g.at(x).shape(), x.shape());
  EXPECT_EQ(g.at(w).shape(), w.shape());
  EXPECT_EQ(g.at(b).shape(), b.shape());
}

TEST(Backward, ConstantLeavesAreInert) {
  std::mt19937_64 rng(4);
  const Tensor xv = random_tensor({3, 2}, rng);
  const Tensor wv = random_tensor({2, 2}, rng);
  auto run = [&](bool x_differentiable, std::size_t& grads, Tensor& out) {
    Tape tape;
    Var x = x_differentiable ? tape.input(xv) : tape.constant(xv);
    Var w = tape.parameter(wv);
    Var y = softmax(tanh(matmul(x, w)), 0);
    out = y.value();
    grads = backward(tape, sum(mul(y, y))).size();
  };
  std::size_t with_input = 0, with_constant = 0;
  Tensor out_input, out_constant;
  run(true, with_input, out_input);
  run(false, with_constant, out_constant);
  EXPECT_EQ(out_input, out_constant);
  EXPECT_EQ(with_input, with_constant + 1);
}

// Random scalar function of ten parameters through every differentiable op.
TEST(Backward, MatchesCentralDifferencesOnRandomComposites) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor x = random_tensor({3, 2}, rng);
    std::vector<Tensor> params{random_tensor({2, 3}, rng, 0.7), random_tensor({1, 3}, rng, 0.7),
                               random_tensor({3, 1}, rng, 0.7)};
    const bool use_bn = seed % 2 == 1;
    auto build = [&](Tape& tape, const std::vector<Var>& p) {
      Var h = add(matmul(tape.constant(x), p[0]), p[1]);
      if (use_bn) h = batch_norm_train(h, tape.constant(Tensor({1, 3}, 1.3)), tape.constant(Tensor({1, 3}, 0.1)), 1e-5);
      Var a = softmax(matmul(tanh(h), p[2]), 0);
      Var pooled = matmul(transpose(a), relu(h));
      Var score = sigmoid(scale(sum(pooled), 0.5));
      return add(binary_cross_entropy(score, 1.0), mean(mul(h, h)));
    };
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& p : params) leaves.push_back(tape.parameter(p));
    const auto g = backward(tape, build(tape, leaves));

    const auto numeric = numeric_grad(
        [&](const std::vector<Tensor>& ps) {
          Tape t;
          std::vector<Var> l;
          for (const Tensor& p : ps) l.push_back(t.parameter(p));
          return build(t, l).value().item();
        },
        params);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t j = 0; j < params[k].numel(); ++j) {
        EXPECT_LT(fd_error(g.at(leaves[k])[j], numeric[k][j]), 1e-6) << "seed " << seed << " tensor " << k << " entry " << j;
      }
    }
  }
}

TEST(Backward, Deterministic) {
  std::mt19937_64 rng(9);
  const Tensor xv = random_tensor({5, 4}, rng);
  const Tensor wv = random_tensor({4, 3}, rng);
  auto run = [&] {
    Tape tape;
    Var w = tape.parameter(wv);
    Var y = softmax(tanh(matmul(tape.constant(xv), w)), 0);
    Var loss = sum(mul(y, y));
    return std::make_pair(loss.value(), backward(tape, loss).at(w));
  };
  EXPECT_EQ(run(), run());
}

TEST(Retention, EmptyTapeIsZero) {
  Tape tape;
  EXPECT_EQ(tape.peak_retained_scalars(), 0u);
  EXPECT_EQ(tape.retained_scalars(), 0u);
}

TEST(Retention, MatmulKeepsBothDifferentiableInputs) {
  Tape tape;
  Var a = tape.input(Tensor({4, 3}, 1.0));
  Var b = tape.input(Tensor({3, 2}, 1.0));
  matmul(a, b);
  EXPECT_EQ(tape.peak_retained_scalars(), 18u);
}

TEST(Retention, MatmulAgainstConstantKeepsOnlyWhatBackwardNeeds) {
  Tape tape;
  Var a = tape.input(Tensor({4, 3}, 1.0));
  Var b = tape.constant(Tensor({3, 2}, 1.0));
  matmul(a, b);
  // dA needs B; nothing needs A.
  EXPECT_EQ(tape.peak_retained_scalars(), 6u);
}

TEST(Retention, ParameterStorageIsNotActivationMemory) {
  Tape tape;
  Var a = tape.input(Tensor({4, 3}, 1.0));
  Var b = tape.parameter(Tensor({3, 2}, 1.0));
  matmul(a, b);
  EXPECT_EQ(tape.peak_retained_scalars(), 12u);
}

TEST(Retention, SequentialOpsAdd) {
  Tape tape;
  Var a = tape.input(Tensor({4, 3}, 1.0));
  Var b = tape.input(Tensor({3, 2}, 1.0));
  Var c = matmul(a, b);
  const std::size_t after_matmul = tape.retained_scalars();
  tanh(c);  // keeps its [4,2] output
  EXPECT_EQ(tape.retained_scalars(), after_matmul + 8);
  EXPECT_EQ(tape.peak_retained_scalars(), tape.retained_scalars());
}

TEST(Retention, PeakIsMonotoneDuringRecording) {
  std::mt19937_64 rng(2);
  Tape tape;
  Var h = tape.input(random_tensor({6, 4}, rng));
  std::size_t last = 0;
  for (int i = 0; i < 5; ++i) {
    h = relu(matmul(h, tape.parameter(random_tensor({4, 4}, rng))));
    EXPECT_GE(tape.peak_retained_scalars(), last);
    last = tape.peak_retained_scalars();
  }
}

TEST(Retention, RegionsPartitionTheCount) {
  Tape tape;
  Var a = tape.input(Tensor({4, 3}, 1.0));
  {
    Tape::RegionScope scope(&tape, Region::Encoder);
    tanh(a);
  }
  sigmoid(a);
  EXPECT_EQ(tape.retained_scalars(Region::Encoder), 12u);
  EXPECT_EQ(tape.retained_scalars(Region::Other), 12u);
  EXPECT_EQ(tape.retained_scalars(), 24u);
}

}  // namespace
}  // namespace abmil::graph
