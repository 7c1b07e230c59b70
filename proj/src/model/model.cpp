#include "abmil/model.hpp"

#include <cmath>
#include <stdexcept>

#include "abmil/errors.hpp"
#include "abmil/rng.hpp"

namespace abmil::model {

using graph::Region;
using graph::Shape;
using graph::shape_str;

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be at least 1");
  if (widths.empty()) throw ConfigError("encoder needs at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("encoder widths must be at least 1");
  }
  if (attention_dim == 0) throw ConfigError("attention_dim must be at least 1");
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must exceed 0");
  if (!(bn_momentum > 0.0) || bn_momentum > 1.0) throw ConfigError("bn_momentum must lie in (0, 1]");
}

std::size_t EncoderParams::input_dim() const { return layers.front().weight.rows(); }
std::size_t EncoderParams::output_dim() const { return layers.back().weight.cols(); }
bool EncoderParams::batch_norm() const { return !layers.empty() && layers.front().bn.has_value(); }

std::vector<Tensor*> ParamSet::encoder_trainables() {
  std::vector<Tensor*> out;
  for (auto& layer : encoder.layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (layer.bn) {
      out.push_back(&layer.bn->gamma);
      out.push_back(&layer.bn->beta);
    }
  }
  return out;
}

std::vector<const Tensor*> ParamSet::encoder_trainables() const {
  auto mut = const_cast<ParamSet*>(this)->encoder_trainables();
  return {mut.begin(), mut.end()};
}

std::vector<Tensor*> ParamSet::pooler_trainables() {
  return {&pooler.attention_v, &pooler.attention_w, &pooler.classifier_c, &pooler.classifier_b};
}

std::vector<const Tensor*> ParamSet::pooler_trainables() const {
  return {&pooler.attention_v, &pooler.attention_w, &pooler.classifier_c, &pooler.classifier_b};
}

std::vector<std::string> ParamSet::encoder_trainable_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    out.push_back(p + "weight");
    out.push_back(p + "bias");
    if (encoder.layers[l].bn) {
      out.push_back(p + "bn_gamma");
      out.push_back(p + "bn_beta");
    }
  }
  return out;
}

std::vector<std::string> ParamSet::pooler_trainable_names() const {
  return {"pooler.attention_v", "pooler.attention_w", "pooler.classifier_c", "pooler.classifier_b"};
}

std::vector<Tensor*> ParamSet::all_tensors() {
  std::vector<Tensor*> out;
  for (auto& layer : encoder.layers) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (layer.bn) {
      out.push_back(&layer.bn->gamma);
      out.push_back(&layer.bn->beta);
      out.push_back(&layer.bn->running_mean);
      out.push_back(&layer.bn->running_var);
    }
  }
  for (Tensor* t : pooler_trainables()) out.push_back(t);
  return out;
}

std::vector<const Tensor*> ParamSet::all_tensors() const {
  auto mut = const_cast<ParamSet*>(this)->all_tensors();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> ParamSet::all_tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    const std::string p = "encoder." + std::to_string(l) + ".";
    out.push_back(p + "weight");
    out.push_back(p + "bias");
    if (encoder.layers[l].bn) {
      for (const char* s : {"bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var"}) out.push_back(p + s);
    }
  }
  for (auto& n : pooler_trainable_names()) out.push_back(n);
  return out;
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const Tensor* t : encoder_trainables()) n += t->numel();
  for (const Tensor* t : pooler_trainables()) n += t->numel();
  return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  const auto ta = a.all_tensors();
  const auto tb = b.all_tensors();
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i] == *tb[i])) return false;
  }
  return a.encoder.final_activation == b.encoder.final_activation;
}

namespace {

Tensor uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-r, r);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

ParamSet init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, "init");
  ParamSet p;
  p.encoder.final_activation = config.final_activation;
  p.encoder.bn_eps = config.bn_eps;
  p.encoder.bn_momentum = config.bn_momentum;
  std::size_t in = config.input_dim;
  for (std::size_t out : config.widths) {
    LinearLayer layer;
    layer.weight = uniform({in, out}, in, rng);
    layer.bias = uniform({1, out}, in, rng);
    if (config.batch_norm) {
      layer.bn = BatchNormParams{Tensor({1, out}, 1.0), Tensor({1, out}, 0.0), Tensor({1, out}, 0.0),
                                 Tensor({1, out}, 1.0)};
    }
    p.encoder.layers.push_back(std::move(layer));
    in = out;
  }
  const std::size_t m = in, l = config.attention_dim;
  p.pooler.attention_v = uniform({l, m}, m, rng);
  p.pooler.attention_w = uniform({l, 1}, l, rng);
  p.pooler.classifier_c = uniform({m, 1}, m, rng);
  p.pooler.classifier_b = uniform({1, 1}, m, rng);
  return p;
}

namespace {

Var bind(const Tensor& t, Tape* tape, LeafKind kind, const std::string& name, std::vector<Var>& leaves) {
  if (!tape) return Var(t);
  Var v = tape->leaf(t, kind, name);
  leaves.push_back(v);
  return v;
}

}  // namespace

Encoded encode(EncoderParams& params, const Var& instances, Mode mode, Tape* tape, LeafKind param_kind) {
  const Tensor& x = instances.value();
  if (x.rank() != 2) throw ShapeError("encode: expected [k, input_dim] instances, got " + shape_str(x.shape()));
  if (params.layers.empty()) throw ShapeError("encode: encoder has no layers");
  if (x.cols() != params.input_dim()) {
    throw ShapeError("encode: instance width " + std::to_string(x.cols()) + " does not match encoder input " +
                     std::to_string(params.input_dim()));
  }
  if (tape && instances.tracked() && instances.tape() != tape) {
    throw std::logic_error("encode: instances recorded on another tape");
  }

  Tape::RegionScope scope(tape, Region::Encoder);
  Encoded out;
  Var h = instances;
  const std::size_t k = x.rows();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LinearLayer& layer = params.layers[l];
    const std::string prefix = "encoder." + std::to_string(l) + ".";
    Var w = bind(layer.weight, tape, param_kind, prefix + "weight", out.param_leaves);
    Var b = bind(layer.bias, tape, param_kind, prefix + "bias", out.param_leaves);
    h = graph::add(graph::matmul(h, w), b);
    if (layer.bn) {
      BatchNormParams& bn = *layer.bn;
      Var gamma = bind(bn.gamma, tape, param_kind, prefix + "bn_gamma", out.param_leaves);
      Var beta = bind(bn.beta, tape, param_kind, prefix + "bn_beta", out.param_leaves);
      if (mode == Mode::Train) {
        graph::BatchStats stats;
        h = graph::batch_norm_train(h, gamma, beta, params.bn_eps, &stats);
        const double mom = params.bn_momentum;
        const double unbias = k > 1 ? static_cast<double>(k) / static_cast<double>(k - 1) : 1.0;
        for (std::size_t j = 0; j < bn.running_mean.numel(); ++j) {
          bn.running_mean[j] = (1.0 - mom) * bn.running_mean[j] + mom * stats.mean[j];
          bn.running_var[j] = (1.0 - mom) * bn.running_var[j] + mom * stats.variance[j] * unbias;
        }
      } else {
        h = graph::batch_norm_infer(h, gamma, beta, bn.running_mean, bn.running_var, params.bn_eps);
      }
    }
    const bool last = l + 1 == params.layers.size();
    if (!last || params.final_activation) h = graph::relu(h);
  }
  out.features = std::move(h);
  return out;
}

Tensor stack_instances(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw std::invalid_argument("empty instance batch");
  const std::size_t d = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("stack_instances: ragged instance widths");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({rows.size(), d}, std::move(data));
}

Tensor encode_infer(const EncoderParams& params, const Tensor& instances) {
  // Infer mode does not touch the running statistics.
  return encode(const_cast<EncoderParams&>(params), Var(instances), Mode::Infer).features.value();
}

Pooled attention_pool(const PoolerParams& params, const Var& features, Tape* tape, LeafKind param_kind) {
  const Tensor& z = features.value();
  if (z.rank() != 2) throw ShapeError("attention_pool: expected [n, M] features, got " + shape_str(z.shape()));
  if (z.cols() != params.feature_dim()) {
    throw ShapeError("attention_pool: feature shape " + shape_str(z.shape()) + " does not match attention matrix " +
                     shape_str(params.attention_v.shape()));
  }
  Tape::RegionScope scope(tape, Region::Pooler);
  Pooled out;
  Var v = bind(params.attention_v, tape, param_kind, "pooler.attention_v", out.param_leaves);
  Var w = bind(params.attention_w, tape, param_kind, "pooler.attention_w", out.param_leaves);
  Var c = bind(params.classifier_c, tape, param_kind, "pooler.classifier_c", out.param_leaves);
  Var b = bind(params.classifier_b, tape, param_kind, "pooler.classifier_b", out.param_leaves);

  Var hidden = graph::tanh(graph::matmul(features, graph::transpose(v)));  // [n,L]
  Var logits = graph::matmul(hidden, w);                                    // [n,1]
  out.attention = graph::softmax(logits, 0);
  out.embedding = graph::matmul(graph::transpose(out.attention), features);  // [1,M]
  out.score = graph::sigmoid(graph::add(graph::matmul(out.embedding, c), b));
  return out;
}

BagForwardResult forward_bag(const ParamSet& params, const Tensor& instances) {
  BagForwardResult r;
  r.features = encode_infer(params.encoder, instances);
  Pooled pooled = attention_pool(params.pooler, Var(r.features));
  r.bag_score = pooled.score.value().item();
  const auto a = pooled.attention.value().data();
  r.attention_weights.assign(a.begin(), a.end());
  return r;
}

Var bce_loss(const Var& score, int label) {
  Tape::RegionScope scope(score.tape(), Region::Loss);
  return graph::binary_cross_entropy(score, static_cast<double>(label));
}

double bce_loss(double score, int label) {
  return graph::binary_cross_entropy(Var(Tensor::scalar(score)), static_cast<double>(label)).value().item();
}

int bag_label(std::span<const int> instance_labels) {
  if (instance_labels.empty()) throw std::invalid_argument("bag_label: empty instance label list");
  for (int y : instance_labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("bag_label: instance labels must be 0 or 1");
    if (y == 1) return 1;
  }
  return 0;
}

}  // namespace abmil::model
