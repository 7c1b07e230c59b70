#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "abmil/tape.hpp"
#include "abmil/tensor.hpp"

namespace abmil::model {

using graph::LeafKind;
using graph::Tape;
using graph::Tensor;
using graph::Var;

enum class Mode { Train, Infer };

struct ModelConfig {
  std::size_t input_dim = 16;
  /// Encoder layer output widths; the last one is the feature width M.
  std::vector<std::size_t> widths{64, 32};
  /// Attention hidden width L.
  std::size_t attention_dim = 16;
  /// ReLU after the last encoder layer (hidden layers always have one).
  bool final_activation = true;
  bool batch_norm = false;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
};

struct BatchNormParams {
  Tensor gamma;         // [1,w]
  Tensor beta;          // [1,w]
  Tensor running_mean;  // [1,w]
  Tensor running_var;   // [1,w], entries > 0
};

struct LinearLayer {
  Tensor weight;  // [in,out]
  Tensor bias;    // [1,out]
  std::optional<BatchNormParams> bn;
};

/// Encoder f_theta: Linear -> [BN] -> ReLU per layer.
struct EncoderParams {
  std::vector<LinearLayer> layers;
  bool final_activation = true;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  bool batch_norm() const;
};

/// Non-gated attention pooling and bag classifier g_phi.
struct PoolerParams {
  Tensor attention_v;  // V [L,M]
  Tensor attention_w;  // w [L,1]
  Tensor classifier_c; // c [M,1]
  Tensor classifier_b; // b [1,1]

  std::size_t attention_dim() const { return attention_v.rows(); }
  std::size_t feature_dim() const { return attention_v.cols(); }
};

struct ParamSet {
  EncoderParams encoder;
  PoolerParams pooler;

  // Trainable tensors in declaration order. Running BN statistics are buffers,
  // not trainables.
  std::vector<Tensor*> encoder_trainables();
  std::vector<const Tensor*> encoder_trainables() const;
  std::vector<Tensor*> pooler_trainables();
  std::vector<const Tensor*> pooler_trainables() const;
  std::vector<std::string> encoder_trainable_names() const;
  std::vector<std::string> pooler_trainable_names() const;

  /// Every stored tensor (trainables and buffers) in serialization order.
  std::vector<Tensor*> all_tensors();
  std::vector<const Tensor*> all_tensors() const;
  std::vector<std::string> all_tensor_names() const;

  std::size_t trainable_count() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b);
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; BN starts at
/// gamma = 1, beta = 0, running mean 0, running variance 1.
ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

struct Encoded {
  Var features;
  /// Leaves bound to the encoder trainables, in order; empty without a tape.
  std::vector<Var> param_leaves;
};

/// Maps [k, input_dim] instances to [k, M] features. In Train mode with BN the
/// batch statistics of the k rows are used and the running statistics are
/// updated; Infer mode uses and leaves the running statistics.
Encoded encode(EncoderParams& params, const Var& instances, Mode mode, Tape* tape = nullptr,
               LeafKind param_kind = LeafKind::Parameter);
/// Stacks per-instance feature vectors into a [k, d] batch; throws
/// "empty instance batch" when k = 0.
Tensor stack_instances(std::span<const std::vector<double>> rows);

/// Infer-mode encoding without recording.
Tensor encode_infer(const EncoderParams& params, const Tensor& instances);

struct Pooled {
  Var score;       // [1,1] sigmoid output
  Var attention;   // [n,1] softmax weights
  Var embedding;   // [1,M]
  std::vector<Var> param_leaves;
};

/// e_i = w^T tanh(V z_i), a = softmax(e), m = sum_i a_i z_i, y' = sigmoid(c^T m + b).
Pooled attention_pool(const PoolerParams& params, const Var& features, Tape* tape = nullptr,
                      LeafKind param_kind = LeafKind::Parameter);

struct BagForwardResult {
  double bag_score = 0.0;
  std::vector<double> attention_weights;
  Tensor features;
};

/// Infer-mode forward of a whole bag without recording.
BagForwardResult forward_bag(const ParamSet& params, const Tensor& instances);

Var bce_loss(const Var& score, int label);
double bce_loss(double score, int label);

/// 1 if any instance label is 1, else 0.
int bag_label(std::span<const int> instance_labels);

// Checkpoint format, all little-endian:
//   u32 magic "ABMP", u32 version, u32 encoder layer count, u32 flags
//   (bit 0: batch norm, bit 1: final activation), f64 bn_eps, f64 bn_momentum,
//   u32 tensor count, per tensor u32 rank + u32 dims, then every tensor's f64
//   payload in declaration order.
void save_params(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_params(const std::filesystem::path& path);
/// One line per tensor: "<name> <shape>".
std::string shape_manifest(const ParamSet& params);

}  // namespace abmil::model
