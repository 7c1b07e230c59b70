#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abmil/bagdata.hpp"
#include "abmil/gradstrat.hpp"
#include "abmil/model.hpp"
#include "abmil/rng.hpp"

namespace abmil::eval {

/// P(score_pos > score_neg) + 0.5 P(tie), computed from midranks
/// (Mann-Whitney). Throws "AUC undefined" unless both classes are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct BagRecord {
  int label = 0;
  double score = 0.0;
  std::vector<double> attention;
  std::vector<int> instance_labels;  // of the evaluated (possibly sampled) instances
};

struct EvalResult {
  double bag_accuracy = 0.0;
  /// Attention vs hidden instance labels, pooled over every evaluated instance
  /// of every bag; absent when only one instance class was seen.
  std::optional<double> instance_auc;
  /// Mean of per-bag AUCs over bags that contain both instance classes.
  std::optional<double> per_bag_auc;
  double mean_loss = 0.0;
  double sample_percent = 100.0;
  double wall_ms = 0.0;
  std::vector<BagRecord> bags;
};

/// Infer-mode evaluation with optional uniform inference-time subsampling.
EvalResult evaluate(const model::ParamSet& params, std::span<const data::Bag> bags, double inference_sample_percent,
                    Rng& rng);

struct MatrixCell {
  train::Strategy strategy = train::Strategy::FullBag;
  /// Chunk percent for Accumulate, training sample percent for SampleTrain,
  /// 100 for FullBag.
  double alpha_pct = 100.0;
  double infer_sample_pct = 100.0;
};

struct MatrixRun {
  MatrixCell cell;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double bag_acc = 0.0;
  std::optional<double> inst_auc;
  std::optional<double> per_bag_auc;
  double train_wall_s = 0.0;
  std::size_t peak_scalars = 0;
  std::size_t fwd_count = 0;
};

struct MatrixAggregate {
  MatrixCell cell;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double bag_acc_mean = 0.0, bag_acc_std = 0.0;
  double inst_auc_mean = 0.0, inst_auc_std = 0.0;
  double train_wall_s_mean = 0.0, train_wall_s_std = 0.0;
  std::size_t peak_scalars = 0;
  std::size_t fwd_count = 0;
};

struct MatrixReport {
  std::vector<MatrixRun> runs;
  std::vector<MatrixAggregate> aggregates;
};

struct MatrixSpec {
  std::vector<train::Strategy> strategies;
  std::vector<double> alphas;
  std::vector<double> infer_samples;
  std::size_t repeats = 1;
  std::uint64_t seed = 0;
  /// Template for every run; strategy, alpha/sample percent and seed are overridden.
  train::TrainConfig train;
  model::ModelConfig model;

  void validate() const;
  /// Distinct training configurations in report order. FullBag ignores alpha
  /// and contributes one cell per inference sampling percent.
  std::vector<MatrixCell> cells() const;
};

/// Seeded dataset factory; called once per repeat.
using DatasetFactory = std::function<data::Dataset(std::uint64_t seed)>;

/// Runs every (cell, repeat). Repeat r uses seed substream_seed(spec.seed,
/// "repeat", r) for both the dataset and the model, shared by all cells. A
/// failing run is recorded and the matrix continues. Runs that differ only in
/// inference sampling share one training run.
MatrixReport run_matrix(const DatasetFactory& make_dataset, const MatrixSpec& spec);

/// Raw runs: strategy,alpha_pct,infer_sample_pct,repeat,bag_acc,inst_auc,
/// train_wall_s,peak_scalars,fwd_count,seed followed by per_bag_auc,status.
std::string runs_csv(const MatrixReport& report);
/// One row per cell with mean and standard deviation over repeats.
std::string summary_csv(const MatrixReport& report);

}  // namespace abmil::eval
