#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include "abmil/errors.hpp"
#include "abmil/evalbench.hpp"
#include "abmil/verify.hpp"

namespace abmil::eval {
namespace {

data::Dataset tiny_dataset(std::uint64_t seed) {
  data::BagSpec spec;
  spec.n_train_bags = 6;
  spec.n_val_bags = 4;
  spec.n_test_bags = 4;
  spec.instances_per_bag = 8;
  spec.key_fraction = 0.25;
  spec.seed = seed;
  return data::make_synthetic_dataset(spec, 4);
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.input_dim = 4;
  c.widths = {6, 4};
  c.attention_dim = 3;
  return c;
}

MatrixSpec tiny_matrix() {
  MatrixSpec m;
  m.strategies = {train::Strategy::Accumulate};
  m.alphas = {50.0};
  m.infer_samples = {100.0};
  m.repeats = 1;
  m.seed = 3;
  m.train.epochs = 3;
  m.train.learning_rate = 1e-2;
  m.model = tiny_model();
  return m;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

TEST(RocAuc, HandExamples) {
  const std::vector<double> s{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(roc_auc(s, std::vector<int>{0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(s, std::vector<int>{1, 1, 0, 0}), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{5, 5, 5, 5}, std::vector<int>{0, 1, 0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 2, 3}, std::vector<int>{0, 0, 1, 1}), 0.875);
}

TEST(RocAuc, SingleClassThrows) {
  try {
    roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("AUC undefined"), std::string::npos);
  }
  EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), std::invalid_argument);
}

TEST(RocAuc, MatchesPairwiseOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 60;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    const int grid = 1 + static_cast<int>(rng() % 6);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng() % (grid * 3)) / grid;
      labels[i] = static_cast<int>(rng() % 2);
    }
    labels[0] = 0;
    labels[1] = 1;
    EXPECT_EQ(roc_auc(scores, labels), verify::pairwise_auc(scores, labels)) << "trial " << trial;
  }
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(30), t(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = normal(rng);
      t[i] = std::exp(3.0 * s[i]) + 1.0;
      y[i] = static_cast<int>(i % 2);
    }
    EXPECT_EQ(roc_auc(s, y), roc_auc(t, y));
  }
}

TEST(Evaluate, AccuracyAndRecords) {
  const auto ds = tiny_dataset(1);
  const auto params = model::init_params(tiny_model(), 1);
  Rng rng(1);
  const auto r = evaluate(params, ds.test, 100.0, rng);
  ASSERT_EQ(r.bags.size(), ds.test.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const double score = model::forward_bag(params, ds.test[i].instances).bag_score;
    EXPECT_EQ(r.bags[i].score, score);
    if ((score >= 0.5) == (ds.test[i].label == 1)) ++correct;
    EXPECT_EQ(r.bags[i].attention.size(), 8u);
  }
  EXPECT_DOUBLE_EQ(r.bag_accuracy, static_cast<double>(correct) / ds.test.size());
  ASSERT_TRUE(r.instance_auc.has_value());
}

TEST(Evaluate, InferenceSampling) {
  const auto ds = tiny_dataset(2);
  const auto params = model::init_params(tiny_model(), 2);
  Rng a(5), b(5);
  const auto ra = evaluate(params, ds.test, 50.0, a);
  const auto rb = evaluate(params, ds.test, 50.0, b);
  for (std::size_t i = 0; i < ra.bags.size(); ++i) {
    EXPECT_EQ(ra.bags[i].attention.size(), 4u);
    EXPECT_EQ(ra.bags[i].score, rb.bags[i].score);
  }
  EXPECT_THROW(evaluate(params, ds.test, 0.0, a), std::invalid_argument);
}

TEST(Evaluate, InstanceAucAbsentWithoutKeys) {
  auto ds = tiny_dataset(3);
  std::vector<data::Bag> negatives;
  for (const auto& b : ds.test)
    if (b.label == 0) negatives.push_back(b);
  ASSERT_FALSE(negatives.empty());
  Rng rng(1);
  const auto r = evaluate(model::init_params(tiny_model(), 3), negatives, 100.0, rng);
  EXPECT_FALSE(r.instance_auc.has_value());
  EXPECT_FALSE(r.per_bag_auc.has_value());
}

TEST(MatrixSpec, CellsAndValidation) {
  MatrixSpec m = tiny_matrix();
  m.strategies = {train::Strategy::FullBag, train::Strategy::Accumulate};
  m.alphas = {25.0, 50.0};
  EXPECT_EQ(m.cells().size(), 3u);
  m.alphas.push_back(3.0);
  EXPECT_EQ(m.cells().size(), 4u);
  m.infer_samples = {100.0, 50.0};
  EXPECT_EQ(m.cells().size(), 8u);
  m.alphas.clear();
  try {
    m.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("alpha"), std::string::npos);
  }
  m = tiny_matrix();
  m.repeats = 0;
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Matrix, SingleCellGivesOneRowEach) {
  const auto report = run_matrix(tiny_dataset, tiny_matrix());
  ASSERT_EQ(report.runs.size(), 1u);
  ASSERT_EQ(report.aggregates.size(), 1u);
  EXPECT_TRUE(report.runs[0].ok) << report.runs[0].error;
  EXPECT_EQ(report.runs[0].fwd_count, 16u);
  EXPECT_EQ(lines(runs_csv(report)).size(), 2u);
  EXPECT_EQ(lines(summary_csv(report)).size(), 2u);
  EXPECT_EQ(lines(runs_csv(report))[0],
            "strategy,alpha_pct,infer_sample_pct,repeat,bag_acc,inst_auc,train_wall_s,peak_scalars,fwd_count,seed,"
            "per_bag_auc,status");
}

TEST(Matrix, RepeatsFillStandardDeviation) {
  MatrixSpec m = tiny_matrix();
  m.repeats = 3;
  const auto report = run_matrix(tiny_dataset, m);
  ASSERT_EQ(report.runs.size(), 3u);
  EXPECT_EQ(report.aggregates[0].runs, 3u);
  EXPECT_TRUE(std::isfinite(report.aggregates[0].bag_acc_std));
  EXPECT_NE(report.runs[0].seed, report.runs[1].seed);
}

TEST(Matrix, FullChunkAccumulationPairsWithFullBag) {
  MatrixSpec m = tiny_matrix();
  m.strategies = {train::Strategy::FullBag, train::Strategy::Accumulate};
  m.alphas = {100.0};
  m.repeats = 2;
  const auto report = run_matrix(tiny_dataset, m);
  ASSERT_EQ(report.runs.size(), 4u);
  for (std::size_t r = 0; r < 2; ++r) {
    const MatrixRun* full = nullptr;
    const MatrixRun* acc = nullptr;
    for (const auto& run : report.runs) {
      if (run.repeat != r) continue;
      (run.cell.strategy == train::Strategy::FullBag ? full : acc) = &run;
    }
    ASSERT_TRUE(full && acc);
    EXPECT_EQ(full->bag_acc, acc->bag_acc);
    EXPECT_EQ(full->seed, acc->seed);
  }
}

TEST(Matrix, FailedRunIsRecorded) {
  int calls = 0;
  auto factory = [&](std::uint64_t seed) {
    if (calls++ == 1) throw std::runtime_error("disk on fire, really");
    return tiny_dataset(seed);
  };
  MatrixSpec m = tiny_matrix();
  m.repeats = 3;
  const auto report = run_matrix(factory, m);
  ASSERT_EQ(report.runs.size(), 3u);
  EXPECT_EQ(report.aggregates[0].failures, 1u);
  EXPECT_FALSE(report.runs[1].ok);
  const auto csv = lines(runs_csv(report));
  ASSERT_EQ(csv.size(), 4u);
  const auto row = fields(csv[2]);
  ASSERT_EQ(row.size(), 12u);
  EXPECT_EQ(row[4], "nan");
  EXPECT_EQ(row[11].rfind("failed:", 0), 0u);
}

TEST(Matrix, DeterministicApartFromWallTime) {
  const auto a = lines(runs_csv(run_matrix(tiny_dataset, tiny_matrix())));
  const auto b = lines(runs_csv(run_matrix(tiny_dataset, tiny_matrix())));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    auto fa = fields(a[i]), fb = fields(b[i]);
    fa[6] = fb[6] = "";
    EXPECT_EQ(fa, fb);
  }
}

}  // namespace
}  // namespace abmil::eval
