#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "abmil/errors.hpp"
#include "abmil/model.hpp"
#include "support.hpp"

namespace abmil::model {
namespace {

using testing::random_tensor;

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "abmil_model_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ModelConfig small_config(bool bn = false) {
  ModelConfig c;
  c.input_dim = 5;
  c.widths = {6, 4};
  c.attention_dim = 3;
  c.batch_norm = bn;
  return c;
}

TEST(ModelConfig, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.widths.clear();
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.bn_momentum = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitParams, DefaultShapes) {
  const ParamSet p = init_params(ModelConfig{}, 1);
  ASSERT_EQ(p.encoder.layers.size(), 2u);
  EXPECT_EQ(p.encoder.layers[0].weight.shape(), (graph::Shape{16, 64}));
  EXPECT_EQ(p.encoder.layers[1].weight.shape(), (graph::Shape{64, 32}));
  EXPECT_EQ(p.pooler.attention_v.shape(), (graph::Shape{16, 32}));
  EXPECT_EQ(p.pooler.attention_w.shape(), (graph::Shape{16, 1}));
  EXPECT_EQ(p.pooler.classifier_c.shape(), (graph::Shape{32, 1}));
  EXPECT_EQ(p.pooler.classifier_b.shape(), (graph::Shape{1, 1}));
}

TEST(InitParams, UniformFanInBoundsAndSeeded) {
  const ParamSet a = init_params(small_config(), 7);
  const ParamSet b = init_params(small_config(), 7);
  const ParamSet c = init_params(small_config(), 8);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  const double bound = 1.0 / std::sqrt(5.0);
  for (double v : a.encoder.layers[0].weight.data()) {
    EXPECT_LE(std::abs(v), bound);
  }
}

TEST(InitParams, BatchNormStartsAsIdentity) {
  const ParamSet p = init_params(small_config(true), 3);
  for (const auto& layer : p.encoder.layers) {
    ASSERT_TRUE(layer.bn.has_value());
    for (double v : layer.bn->gamma.data()) EXPECT_EQ(v, 1.0);
    for (double v : layer.bn->beta.data()) EXPECT_EQ(v, 0.0);
    for (double v : layer.bn->running_var.data()) EXPECT_EQ(v, 1.0);
  }
}

TEST(Encode, ZeroWeightsGiveZeroFeatures) {
  ParamSet p = init_params(small_config(), 1);
  for (auto& layer : p.encoder.layers) {
    layer.weight = Tensor(layer.weight.shape(), 0.0);
    layer.bias = Tensor(layer.bias.shape(), 0.0);
  }
  std::mt19937_64 rng(1);
  const Tensor z = encode_infer(p.encoder, random_tensor({3, 5}, rng));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, IdentityLayerWithoutFinalActivation) {
  ModelConfig c = small_config();
  c.widths = {5};
  c.final_activation = false;
  ParamSet p = init_params(c, 1);
  p.encoder.layers[0].weight = Tensor({5, 5}, 0.0);
  for (std::size_t i = 0; i < 5; ++i) p.encoder.layers[0].weight(i, i) = 1.0;
  p.encoder.layers[0].bias = Tensor({1, 5}, 0.0);
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({4, 5}, rng);
  EXPECT_EQ(encode_infer(p.encoder, x), x);
}

TEST(Encode, EmptyInstanceBatch) {
  try {
    stack_instances({});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "empty instance batch");
  }
}

TEST(Encode, WidthMismatch) {
  ParamSet p = init_params(small_config(), 1);
  EXPECT_THROW(encode_infer(p.encoder, Tensor({2, 4})), ShapeError);
}

TEST(Encode, TrainEqualsInferWithoutBatchNorm) {
  ParamSet p = init_params(small_config(), 5);
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({7, 5}, rng);
  const Tensor train = encode(p.encoder, Var(x), Mode::Train).features.value();
  EXPECT_EQ(train, encode_infer(p.encoder, x));
}

TEST(Encode, BatchNormOnIdenticalRows) {
  ModelConfig c = small_config(true);
  c.widths = {3};
  c.final_activation = false;
  ParamSet p = init_params(c, 1);
  const Tensor x = Tensor::matrix({{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}});
  const Tensor z = encode(p.encoder, Var(x), Mode::Train).features.value();
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Encode, BatchNormTrainUpdatesRunningStatsInferDoesNot) {
  ModelConfig c = small_config(true);
  c.widths = {2};
  c.final_activation = false;
  ParamSet p = init_params(c, 4);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({5, 5}, rng);

  const BatchNormParams before = *p.encoder.layers[0].bn;
  encode_infer(p.encoder, x);
  EXPECT_EQ(p.encoder.layers[0].bn->running_mean, before.running_mean);

  // Batch statistics of the linear output, by hand.
  const Tensor& w = p.encoder.layers[0].weight;
  const Tensor& b = p.encoder.layers[0].bias;
  std::vector<double> mean(2, 0.0), var(2, 0.0);
  std::vector<std::vector<double>> h(5, std::vector<double>(2));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      h[i][j] = b(0, j);
      for (std::size_t k = 0; k < 5; ++k) h[i][j] += x(i, k) * w(k, j);
      mean[j] += h[i][j] / 5.0;
    }
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) var[j] += (h[i][j] - mean[j]) * (h[i][j] - mean[j]);

  const Tensor z = encode(p.encoder, Var(x), Mode::Train).features.value();
  const auto& bn = *p.encoder.layers[0].bn;
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_NEAR(bn.running_mean(0, j), 0.1 * mean[j], 1e-12);
    EXPECT_NEAR(bn.running_var(0, j), 0.9 + 0.1 * var[j] / 4.0, 1e-12);  // unbiased
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(z(i, j), (h[i][j] - mean[j]) / std::sqrt(var[j] / 5.0 + 1e-5), 1e-12);
    }
  }
}

TEST(Encode, BatchNormFeaturesDependOnBatchComposition) {
  ParamSet p = init_params(small_config(true), 6);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({6, 5}, rng);
  ParamSet q = p;
  const Tensor whole = encode(p.encoder, Var(x), Mode::Train).features.value();
  const Tensor half = encode(q.encoder, Var(x.rows_slice(0, 3)), Mode::Train).features.value();
  EXPECT_GT(graph::max_abs_diff(whole.rows_slice(0, 3), half), 1e-6);
}

TEST(AttentionPool, SingleInstance) {
  const ParamSet p = init_params(small_config(), 1);
  std::mt19937_64 rng(1);
  const Tensor z = random_tensor({1, 4}, rng);
  const Pooled r = attention_pool(p.pooler, Var(z));
  EXPECT_EQ(r.attention.value().item(), 1.0);
  EXPECT_EQ(r.embedding.value(), z);
}

TEST(AttentionPool, IdenticalInstancesShareAttention) {
  const ParamSet p = init_params(small_config(), 2);
  const Tensor z = Tensor::matrix({{0.1, -0.3, 0.5, 2.0}, {0.1, -0.3, 0.5, 2.0}});
  const Pooled r = attention_pool(p.pooler, Var(z));
  EXPECT_EQ(r.attention.value()[0], 0.5);
  EXPECT_EQ(r.attention.value()[1], 0.5);
}

TEST(AttentionPool, ZeroAttentionVectorIsUniform) {
  ParamSet p = init_params(small_config(), 3);
  p.pooler.attention_w = Tensor(p.pooler.attention_w.shape(), 0.0);
  std::mt19937_64 rng(3);
  const Pooled r = attention_pool(p.pooler, Var(random_tensor({5, 4}, rng)));
  for (double a : r.attention.value().data()) EXPECT_NEAR(a, 0.2, 1e-15);
}

TEST(AttentionPool, FeatureWidthMismatch) {
  const ParamSet p = init_params(small_config(), 3);
  EXPECT_THROW(attention_pool(p.pooler, Var(Tensor({3, 5}))), ShapeError);
}

TEST(AttentionPool, NormalizedOverRandomBags) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const ParamSet p = init_params(small_config(), rng());
    const std::size_t n = 1 + rng() % 40;
    const BagForwardResult r = forward_bag(p, random_tensor({n, 5}, rng, 3.0));
    double total = 0.0;
    for (double a : r.attention_weights) {
      EXPECT_GE(a, 0.0);
      total += a;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    EXPECT_GT(r.bag_score, 0.0);
    EXPECT_LT(r.bag_score, 1.0);
  }
}

TEST(AttentionPool, PermutationEquivariant) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const ParamSet p = init_params(small_config(), rng());
    const std::size_t n = 2 + rng() % 20;
    const Tensor z = random_tensor({n, 4}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const Pooled a = attention_pool(p.pooler, Var(z));
    const Pooled b = attention_pool(p.pooler, Var(z.gather_rows(perm)));
    EXPECT_NEAR(a.score.value().item(), b.score.value().item(), 1e-12);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_NEAR(b.attention.value()[i], a.attention.value()[perm[i]], 1e-12);
    }
  }
}

TEST(Loss, BinaryCrossEntropyValues) {
  EXPECT_NEAR(bce_loss(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_loss(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_LT(bce_loss(1.0 - 1e-15, 1), 1e-11);
  EXPECT_TRUE(std::isfinite(bce_loss(1.0, 0)));
  EXPECT_NEAR(bce_loss(Var(Tensor::matrix({{0.25}})), 0).value().item(), -std::log(0.75), 1e-15);
}

TEST(BagLabel, OrRule) {
  EXPECT_EQ(bag_label(std::vector<int>{0, 0, 0}), 0);
  EXPECT_EQ(bag_label(std::vector<int>{0, 1, 0}), 1);
  EXPECT_EQ(bag_label(std::vector<int>{1, 1, 1}), 1);
  EXPECT_THROW(bag_label(std::vector<int>{}), std::invalid_argument);
}

TEST(ParamIo, RoundTripIsBitwise) {
  for (bool bn : {false, true}) {
    ParamSet p = init_params(small_config(bn), 21);
    if (bn) p.encoder.layers[0].bn->running_var[1] = 2.5;
    const auto path = scratch(bn ? "bn.bin" : "plain.bin");
    save_params(p, path);
    const ParamSet q = load_params(path);
    EXPECT_TRUE(p == q);
    EXPECT_EQ(q.encoder.batch_norm(), bn);
  }
}

TEST(ParamIo, RejectsBadMagicAndTruncation) {
  const ParamSet p = init_params(small_config(), 22);
  const auto path = scratch("trunc.bin");
  save_params(p, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  try {
    load_params(path);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos) << e.what();
  }
  {
    std::ofstream out(scratch("magic.bin"), std::ios::binary);
    out << "not a checkpoint at all";
  }
  EXPECT_THROW(load_params(scratch("magic.bin")), FormatError);
  EXPECT_THROW(load_params(scratch("missing.bin")), IoError);
}

TEST(ParamIo, ShapeManifestListsEveryTensor) {
  const ParamSet p = init_params(small_config(true), 23);
  const std::string manifest = shape_manifest(p);
  const auto lines = std::count(manifest.begin(), manifest.end(), '\n');
  EXPECT_EQ(static_cast<std::size_t>(lines), p.all_tensors().size());
  EXPECT_NE(manifest.find("[5,6]"), std::string::npos) << manifest;
}

}  // namespace
}  // namespace abmil::model
