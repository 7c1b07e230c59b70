#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "abmil/errors.hpp"
#include "abmil/gradstrat.hpp"

namespace abmil::train {

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FullBag: return "full_bag";
    case Strategy::Accumulate: return "accumulate";
    case Strategy::SampleTrain: return "sample_train";
  }
  return "unknown";
}

Strategy parse_strategy(const std::string& text) {
  if (text == "full_bag") return Strategy::FullBag;
  if (text == "accumulate") return Strategy::Accumulate;
  if (text == "sample_train") return Strategy::SampleTrain;
  throw ConfigError("unknown strategy '" + text + "' (accepted: full_bag, accumulate, sample_train)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must exceed 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(alpha_percent > 0.0) || alpha_percent > 100.0) throw ConfigError("alpha_percent must lie in (0, 100]");
  if (!(sample_percent > 0.0) || sample_percent > 100.0) throw ConfigError("sample_percent must lie in (0, 100]");
  if (selection_window < 1) throw ConfigError("selection_window must be at least 1");
}

AdamState AdamState::zeros_like(const ParamSet& params) {
  AdamState s;
  const GradSet g = GradSet::zeros_like(params);
  for (const auto* group : {&g.encoder, &g.pooler}) {
    for (const Tensor& t : *group) {
      s.first.emplace_back(t.shape());
      s.second.emplace_back(t.shape());
    }
  }
  return s;
}

void adam_step(ParamSet& params, const GradSet& grads, double learning_rate, double weight_decay, AdamState& state) {
  std::vector<Tensor*> targets = params.encoder_trainables();
  std::vector<std::string> names = params.encoder_trainable_names();
  for (Tensor* t : params.pooler_trainables()) targets.push_back(t);
  for (auto& n : params.pooler_trainable_names()) names.push_back(n);
  std::vector<const Tensor*> g;
  for (const auto& t : grads.encoder) g.push_back(&t);
  for (const auto& t : grads.pooler) g.push_back(&t);

  if (g.size() != targets.size() || state.first.size() != targets.size()) {
    throw ShapeError("adam_step: gradient/state/parameter counts differ");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i]->shape() != targets[i]->shape()) {
      throw ShapeError("adam_step: gradient for " + names[i] + " has shape " + graph::shape_str(g[i]->shape()));
    }
    for (double v : g[i]->data()) {
      if (!std::isfinite(v)) throw std::domain_error("non-finite gradient in " + names[i]);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamConstants::kBeta1, t);
  const double c2 = 1.0 - std::pow(AdamConstants::kBeta2, t);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    Tensor& p = *targets[i];
    Tensor& m = state.first[i];
    Tensor& v = state.second[i];
    const Tensor& gi = *g[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      p[j] -= learning_rate * weight_decay * p[j];
      m[j] = AdamConstants::kBeta1 * m[j] + (1.0 - AdamConstants::kBeta1) * gi[j];
      v[j] = AdamConstants::kBeta2 * v[j] + (1.0 - AdamConstants::kBeta2) * gi[j] * gi[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= learning_rate * mhat / (std::sqrt(vhat) + AdamConstants::kEps);
    }
  }
}

std::size_t select_best_epoch(std::span<const double> val_errors, std::size_t window) {
  if (val_errors.empty()) throw std::invalid_argument("select_best_epoch: empty history");
  const std::size_t n = val_errors.size();
  const std::size_t w = std::clamp<std::size_t>(window, 1, n);
  // Window sums of equal length compare like means; the slack absorbs
  // summation-order rounding so that equal windows tie.
  constexpr double kTieSlack = 1e-12;
  std::size_t best_start = 0;
  double best_sum = 0.0;
  for (std::size_t i = 0; i < w; ++i) best_sum += val_errors[i];
  for (std::size_t start = 1; start + w <= n; ++start) {
    double s = 0.0;
    for (std::size_t i = start; i < start + w; ++i) s += val_errors[i];
    if (s < best_sum - kTieSlack) {
      best_sum = s;
      best_start = start;
    }
  }
  std::size_t best = best_start;
  for (std::size_t i = best_start + 1; i < best_start + w; ++i) {
    if (val_errors[i] < val_errors[best]) best = i;
  }
  return best;
}

TrainResult train(const data::Dataset& dataset, const TrainConfig& config, model::ModelConfig model_config) {
  config.validate();
  model_config.batch_norm = config.bn_enabled;
  if (dataset.input_dim() != model_config.input_dim) {
    throw ConfigError("dataset instance dimension " + std::to_string(dataset.input_dim()) +
                      " does not match model input_dim " + std::to_string(model_config.input_dim));
  }
  return train(dataset, config, model::init_params(model_config, config.seed));
}

TrainResult train(const data::Dataset& dataset, const TrainConfig& config, ParamSet params) {
  config.validate();
  if (dataset.train.empty() || dataset.validation.empty()) {
    throw ConfigError("training needs non-empty train and validation splits");
  }
  if (dataset.input_dim() != params.encoder.input_dim()) {
    throw ConfigError("dataset instance dimension " + std::to_string(dataset.input_dim()) +
                      " does not match encoder input " + std::to_string(params.encoder.input_dim()));
  }
  const auto run_start = std::chrono::steady_clock::now();
  Rng shuffle_rng = make_rng(config.seed, "shuffle");
  Rng sample_rng = make_rng(config.seed, "sampling");
  AdamState adam = AdamState::zeros_like(params);

  TrainResult result;
  std::vector<ParamSet> snapshots;
  snapshots.reserve(config.epochs);
  std::vector<double> val_errors;
  std::vector<std::size_t> order(dataset.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t b : order) {
      const data::Bag& bag = dataset.train[b];
      GradResult step;
      switch (config.strategy) {
        case Strategy::FullBag:
          step = full_bag_grad(params, bag.instances, bag.label);
          break;
        case Strategy::Accumulate:
          step = accum_grad(params, bag.instances, bag.label, chunk_size_for(bag.size(), config.alpha_percent));
          break;
        case Strategy::SampleTrain:
          step = sample_train_grad(params, bag.instances, bag.label, config.sample_percent, sample_rng);
          break;
      }
      adam_step(params, step.grads, config.learning_rate, config.weight_decay, adam);
      loss_sum += step.report.loss;
      rec.fwd_count = std::max(rec.fwd_count, step.report.forward_count);
      rec.peak_scalars = std::max(rec.peak_scalars, step.report.peak_retained_scalars);
      result.steps.push_back(step.report);
    }
    rec.train_loss = loss_sum / static_cast<double>(dataset.train.size());

    double val_loss = 0.0;
    std::size_t wrong = 0;
    for (const data::Bag& bag : dataset.validation) {
      const auto fwd = model::forward_bag(params, bag.instances);
      val_loss += model::bce_loss(fwd.bag_score, bag.label);
      const int predicted = fwd.bag_score >= 0.5 ? 1 : 0;
      if (predicted != bag.label) ++wrong;
    }
    const auto n_val = static_cast<double>(dataset.validation.size());
    rec.val_loss = val_loss / n_val;
    rec.val_error = static_cast<double>(wrong) / n_val;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - epoch_start).count();

    val_errors.push_back(rec.val_error);
    result.history.push_back(rec);
    snapshots.push_back(params);
  }

  const std::size_t best = select_best_epoch(val_errors, config.selection_window);
  result.best = std::move(snapshots[best]);
  result.best_epoch = best + 1;
  result.total_wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - run_start).count();
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_error,wall_ms,fwd_count,peak_scalars\n";
  char buf[256];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.3f,%zu,%zu\n", r.epoch, r.train_loss, r.val_loss,
                  r.val_error, r.wall_ms, r.fwd_count, r.peak_scalars);
    os << buf;
  }
  return os.str();
}

void write_history_csv(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << history_csv(history);
}

}  // namespace abmil::train
