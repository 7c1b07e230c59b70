#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abmil/bagdata.hpp"
#include "abmil/model.hpp"
#include "abmil/rng.hpp"

namespace abmil::train {

using graph::Tensor;
using model::ParamSet;

/// Gradients shaped like the trainables of a ParamSet.
struct GradSet {
  std::vector<Tensor> encoder;
  std::vector<Tensor> pooler;
  std::size_t accumulations = 0;

  static GradSet zeros_like(const ParamSet& params);
  void add_encoder(std::span<const Tensor> terms);

  /// All encoder gradients flattened in order (and likewise for the pooler).
  Tensor flat_encoder() const;
  Tensor flat_pooler() const;
};

/// max over tensors of relative_l2, per group.
double max_relative_l2(std::span<const Tensor> a, std::span<const Tensor> b);

struct StepReport {
  double loss = 0.0;
  /// Instance passes through the encoder.
  std::size_t forward_count = 0;
  /// Peak retained scalars over every tape used by the step.
  std::size_t peak_retained_scalars = 0;
  /// Same, restricted to nodes recorded inside the encoder.
  std::size_t encoder_peak_scalars = 0;
  double wall_ms = 0.0;
};

struct GradResult {
  GradSet grads;
  StepReport report;
  /// Attention weights of the reporting forward pass.
  std::vector<double> attention;
  /// Loss of every chunk pass (accumulation only), in processing order.
  std::vector<double> chunk_losses;
};

/// Conventional path: the whole bag is encoded in Train mode on one tape.
GradResult full_bag_grad(ParamSet& params, const Tensor& instances, int label);

struct AccumOptions {
  std::size_t chunk_size = 1;
  /// Processing order of the contiguous chunks; empty means ascending.
  std::vector<std::size_t> chunk_order;
};

/// Memory-bounded path.
///  A: encode every instance in Infer mode, without a tape, into a cache Z.
///  B: forward Z as constants through the pooler, backward -> d(phi), loss.
///  C: per chunk, encode it in Train mode on a fresh tape, splice its rows into
///     Z (all other rows constant), forward pooler and loss, backward, and add
///     the encoder gradient into d(theta).
/// Matches full_bag_grad when the encoder has no batch normalization.
GradResult accum_grad(ParamSet& params, const Tensor& instances, int label, const AccumOptions& options);
GradResult accum_grad(ParamSet& params, const Tensor& instances, int label, std::size_t chunk_size);

/// Uniform subsample of ceil(n * percent / 100) instances, then full_bag_grad.
GradResult sample_train_grad(ParamSet& params, const Tensor& instances, int label, double sample_percent, Rng& rng);

/// max(1, round(n * alpha / 100)), capped at n.
std::size_t chunk_size_for(std::size_t n, double alpha_percent);

enum class Strategy { FullBag, Accumulate, SampleTrain };
const char* strategy_name(Strategy s);
Strategy parse_strategy(const std::string& text);

struct TrainConfig {
  double learning_rate = 5e-5;
  double weight_decay = 1e-3;
  std::size_t epochs = 300;
  double alpha_percent = 25.0;
  std::size_t selection_window = 15;
  std::uint64_t seed = 0;
  bool bn_enabled = false;
  Strategy strategy = Strategy::FullBag;
  double sample_percent = 100.0;

  void validate() const;
};

struct AdamConstants {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::size_t step = 0;

  static AdamState zeros_like(const ParamSet& params);
};

/// Decoupled weight decay p -= lr*wd*p, then the bias-corrected Adam update.
/// Throws "non-finite gradient in <name>" before touching any parameter.
void adam_step(ParamSet& params, const GradSet& grads, double learning_rate, double weight_decay, AdamState& state);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_error = 0.0;
  double wall_ms = 0.0;
  /// Largest per-step encoder forward count of the epoch.
  std::size_t fwd_count = 0;
  /// Largest per-step peak retained scalars of the epoch.
  std::size_t peak_scalars = 0;
};

struct TrainResult {
  ParamSet best;
  std::size_t best_epoch = 0;  // 1-based
  std::vector<EpochRecord> history;
  std::vector<StepReport> steps;
  double total_wall_ms = 0.0;
};

/// Lowest mean validation error over any `window` consecutive epochs (earliest
/// window on ties), then the lowest-error epoch inside it (earliest on ties).
/// Windows longer than the history shrink to the history. Returns a 0-based index.
std::size_t select_best_epoch(std::span<const double> val_errors, std::size_t window);

/// One gradient step per training bag in a seeded shuffled order per epoch,
/// validation after every epoch, model selection at the end.
TrainResult train(const data::Dataset& dataset, const TrainConfig& config, model::ModelConfig model_config);
/// Same, starting from the given parameters.
TrainResult train(const data::Dataset& dataset, const TrainConfig& config, ParamSet initial);

/// Header: epoch,train_loss,val_loss,val_error,wall_ms,fwd_count,peak_scalars
void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path);
std::string history_csv(std::span<const EpochRecord> history);

}  // namespace abmil::train
