#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "abmil/tensor.hpp"

namespace abmil::data {

using graph::Tensor;

/// Labeled instances: features [N, dim] and a class per row.
struct InstancePool {
  Tensor features;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
};

/// Class-conditional Gaussians: class c has mean mu_c on the sphere of radius 3
/// (drawn once per seed, redrawn until all pairs are more than 2 apart) and
/// identity covariance. Rows are grouped by class.
InstancePool make_synthetic_pool(std::uint64_t seed, std::size_t n_classes, std::size_t input_dim,
                                 std::size_t samples_per_class);

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801),
/// scaling pixels to [0,1] and keeping at most `limit` items.
InstancePool load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit);

struct BagSpec {
  std::size_t n_train_bags = 40;
  std::size_t n_val_bags = 12;
  std::size_t n_test_bags = 20;
  std::size_t instances_per_bag = 50;
  double key_fraction = 0.1;
  int key_class = 9;
  double positive_bag_fraction = 0.5;
  std::uint64_t seed = 0;

  /// 100/30/60 bags of 500 instances with 5% key instances.
  static BagSpec full_scale();

  std::size_t key_count() const;
  void validate() const;
};

enum class Split { Train, Validation, Test };
const char* split_name(Split split);

struct Bag {
  Tensor instances;                 // [n, dim]
  std::vector<int> instance_labels; // hidden, 1 = key
  int label = 0;
  Split split = Split::Train;
  std::vector<std::size_t> pool_indices;

  std::size_t size() const { return instance_labels.size(); }
};

struct Dataset {
  std::vector<Bag> train;
  std::vector<Bag> validation;
  std::vector<Bag> test;
  BagSpec spec;

  std::size_t input_dim() const;
  const std::vector<Bag>& split(Split s) const;
};

/// Partitions the pool per class into disjoint train/validation/test shares
/// (proportional to the bag counts) and draws bags from their share: positive
/// bags get exactly key_count() key-class instances, negative bags none, no
/// instance repeats within a bag, and instance order is shuffled.
Dataset build_bags(const InstancePool& pool, const BagSpec& spec);

/// Synthetic pool with about 1.25 distinct instances per bag slot, then
/// build_bags. Pool and bags both derive from spec.seed.
Dataset make_synthetic_dataset(const BagSpec& spec, std::size_t input_dim, std::size_t n_classes = 10);

/// Writes <dir>/{train,validation,test}.bin and <dir>/dataset.txt.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace abmil::data
