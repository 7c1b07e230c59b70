#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "abmil/errors.hpp"
#include "abmil/gradstrat.hpp"

namespace abmil::train {

using graph::Region;
using graph::Tape;
using graph::Var;
using model::Mode;

GradSet GradSet::zeros_like(const ParamSet& params) {
  GradSet g;
  for (const Tensor* t : params.encoder_trainables()) g.encoder.emplace_back(t->shape());
  for (const Tensor* t : params.pooler_trainables()) g.pooler.emplace_back(t->shape());
  return g;
}

void GradSet::add_encoder(std::span<const Tensor> terms) {
  if (terms.size() != encoder.size()) throw ShapeError("GradSet::add_encoder: tensor count mismatch");
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].shape() != encoder[i].shape()) {
      throw ShapeError("GradSet::add_encoder: shape mismatch " + graph::shape_str(terms[i].shape()) + " vs " +
                       graph::shape_str(encoder[i].shape()));
    }
    for (std::size_t j = 0; j < terms[i].numel(); ++j) encoder[i][j] += terms[i][j];
  }
  ++accumulations;
}

namespace {

Tensor flatten(std::span<const Tensor> parts) {
  std::vector<double> out;
  for (const Tensor& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  if (out.empty()) out.push_back(0.0);
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

std::vector<Tensor> gradients_of(const graph::Gradients& grads, std::span<const Var> leaves) {
  std::vector<Tensor> out;
  out.reserve(leaves.size());
  for (const Var& leaf : leaves) out.push_back(grads.at(leaf));
  return out;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

Tensor GradSet::flat_encoder() const { return flatten(encoder); }
Tensor GradSet::flat_pooler() const { return flatten(pooler); }

double max_relative_l2(std::span<const Tensor> a, std::span<const Tensor> b) {
  if (a.size() != b.size()) throw ShapeError("max_relative_l2: tensor count mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, graph::relative_l2(a[i], b[i]));
  return worst;
}

GradResult full_bag_grad(ParamSet& params, const Tensor& instances, int label) {
  const auto start = std::chrono::steady_clock::now();
  Tape tape;
  Var x = tape.constant(instances, "instances");
  auto encoded = model::encode(params.encoder, x, Mode::Train, &tape);
  auto pooled = model::attention_pool(params.pooler, encoded.features, &tape);
  Var loss = model::bce_loss(pooled.score, label);
  const auto grads = graph::backward(tape, loss);

  GradResult r;
  r.grads.encoder = gradients_of(grads, encoded.param_leaves);
  r.grads.pooler = gradients_of(grads, pooled.param_leaves);
  r.grads.accumulations = 1;
  r.attention = to_vector(pooled.attention.value());
  r.report.loss = loss.value().item();
  r.report.forward_count = instances.rows();
  r.report.peak_retained_scalars = tape.peak_retained_scalars();
  r.report.encoder_peak_scalars = tape.peak_retained_scalars(Region::Encoder);
  r.report.wall_ms = elapsed_ms(start);
  return r;
}

GradResult accum_grad(ParamSet& params, const Tensor& instances, int label, std::size_t chunk_size) {
  return accum_grad(params, instances, label, AccumOptions{chunk_size, {}});
}

GradResult accum_grad(ParamSet& params, const Tensor& instances, int label, const AccumOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n = instances.rows();
  const std::size_t k = options.chunk_size;
  if (k < 1 || k > n) {
    throw std::invalid_argument("accum_grad: chunk_size " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  const std::size_t n_chunks = (n + k - 1) / k;
  std::vector<std::size_t> order = options.chunk_order;
  if (order.empty()) {
    order.resize(n_chunks);
    std::iota(order.begin(), order.end(), std::size_t{0});
  } else {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != n_chunks || sorted[i] != i) {
        throw std::invalid_argument("accum_grad: chunk_order is not a permutation of the " + std::to_string(n_chunks) +
                                    " chunks");
      }
    }
  }

  GradResult r;
  r.grads = GradSet::zeros_like(params);

  // A: feature cache, no activations kept.
  const Tensor cache = model::encode_infer(params.encoder, instances);

  // B: classifier gradient and the reported loss.
  {
    Tape tape;
    Var z = tape.constant(cache, "feature_cache");
    auto pooled = model::attention_pool(params.pooler, z, &tape);
    Var loss = model::bce_loss(pooled.score, label);
    const auto grads = graph::backward(tape, loss);
    r.grads.pooler = gradients_of(grads, pooled.param_leaves);
    r.attention = to_vector(pooled.attention.value());
    r.report.loss = loss.value().item();
    r.report.peak_retained_scalars = tape.peak_retained_scalars();
  }

  // C: one encoder term per chunk; everything outside the chunk is constant.
  for (std::size_t c : order) {
    const std::size_t begin = c * k;
    const std::size_t end = std::min(begin + k, n);
    Tape tape;
    Var chunk = tape.constant(instances.rows_slice(begin, end), "chunk");
    auto encoded = model::encode(params.encoder, chunk, Mode::Train, &tape);

    std::vector<Var> parts;
    if (begin > 0) parts.push_back(tape.constant(cache.rows_slice(0, begin), "cache_head"));
    parts.push_back(encoded.features);
    if (end < n) parts.push_back(tape.constant(cache.rows_slice(end, n), "cache_tail"));
    Var z = graph::concat_rows(parts);

    auto pooled = model::attention_pool(params.pooler, z, &tape, graph::LeafKind::Constant);
    Var loss = model::bce_loss(pooled.score, label);
    const auto grads = graph::backward(tape, loss);
    r.grads.add_encoder(gradients_of(grads, encoded.param_leaves));
    r.chunk_losses.push_back(loss.value().item());
    r.report.peak_retained_scalars = std::max(r.report.peak_retained_scalars, tape.peak_retained_scalars());
    r.report.encoder_peak_scalars =
        std::max(r.report.encoder_peak_scalars, tape.peak_retained_scalars(Region::Encoder));
  }

  r.report.forward_count = 2 * n;
  r.report.wall_ms = elapsed_ms(start);
  return r;
}

GradResult sample_train_grad(ParamSet& params, const Tensor& instances, int label, double sample_percent, Rng& rng) {
  const std::size_t n = instances.rows();
  const std::size_t count = sample_count(n, sample_percent);
  const auto picked = sample_without_replacement(n, count, rng);
  return full_bag_grad(params, instances.gather_rows(picked), label);
}

std::size_t chunk_size_for(std::size_t n, double alpha_percent) {
  if (!(alpha_percent > 0.0) || alpha_percent > 100.0) throw ConfigError("alpha_percent must lie in (0, 100]");
  const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * alpha_percent / 100.0));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n, 1));
}

}  // namespace abmil::train
