#include "abmil/bagdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "abmil/errors.hpp"
#include "abmil/model.hpp"
#include "abmil/rng.hpp"

namespace abmil::data {

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "unknown";
}

BagSpec BagSpec::full_scale() {
  BagSpec s;
  s.n_train_bags = 100;
  s.n_val_bags = 30;
  s.n_test_bags = 60;
  s.instances_per_bag = 500;
  s.key_fraction = 0.05;
  return s;
}

std::size_t BagSpec::key_count() const {
  return static_cast<std::size_t>(std::llround(key_fraction * static_cast<double>(instances_per_bag)));
}

void BagSpec::validate() const {
  if (n_train_bags < 1 || n_val_bags < 1 || n_test_bags < 1) throw ConfigError("every split needs at least one bag");
  if (instances_per_bag < 1) throw ConfigError("instances_per_bag must be at least 1");
  if (!(key_fraction > 0.0)) throw ConfigError("key_fraction must exceed 0");
  if (key_fraction > 1.0) throw ConfigError("key_fraction must not exceed 1");
  if (key_count() < 1) throw ConfigError("key_fraction * instances_per_bag must round to at least one key instance");
  if (!(positive_bag_fraction >= 0.0 && positive_bag_fraction <= 1.0)) {
    throw ConfigError("positive_bag_fraction must lie in [0, 1]");
  }
}

std::size_t Dataset::input_dim() const {
  for (const auto* s : {&train, &validation, &test}) {
    if (!s->empty()) return s->front().instances.cols();
  }
  return 0;
}

const std::vector<Bag>& Dataset::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Validation: return validation;
    case Split::Test: return test;
  }
  return train;
}

InstancePool make_synthetic_pool(std::uint64_t seed, std::size_t n_classes, std::size_t input_dim,
                                 std::size_t samples_per_class) {
  if (n_classes < 2) throw ConfigError("synthetic pool needs at least 2 classes");
  if (input_dim < 1 || samples_per_class < 1) throw ConfigError("synthetic pool needs positive dim and class size");
  Rng rng = make_rng(seed, "pool");
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kRadius = 3.0;
  constexpr double kMinSeparation = 2.0;
  constexpr int kMaxAttempts = 1000;

  std::vector<std::vector<double>> means;
  for (int attempt = 0;; ++attempt) {
    means.assign(n_classes, std::vector<double>(input_dim));
    for (auto& mu : means) {
      double norm = 0.0;
      do {
        norm = 0.0;
        for (double& v : mu) {
          v = normal(rng);
          norm += v * v;
        }
      } while (norm == 0.0);
      norm = std::sqrt(norm);
      for (double& v : mu) v *= kRadius / norm;
    }
    bool separated = true;
    for (std::size_t a = 0; a < n_classes && separated; ++a) {
      for (std::size_t b = a + 1; b < n_classes; ++b) {
        double d = 0.0;
        for (std::size_t j = 0; j < input_dim; ++j) d += (means[a][j] - means[b][j]) * (means[a][j] - means[b][j]);
        if (std::sqrt(d) <= kMinSeparation) {
          separated = false;
          break;
        }
      }
    }
    if (separated) break;
    if (attempt + 1 == kMaxAttempts) {
      throw ConfigError("cannot place " + std::to_string(n_classes) + " class means in dimension " +
                        std::to_string(input_dim) + " with separation > 2");
    }
  }

  InstancePool pool;
  pool.features = Tensor({n_classes * samples_per_class, input_dim});
  pool.labels.reserve(n_classes * samples_per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < samples_per_class; ++s, ++row) {
      for (std::size_t j = 0; j < input_dim; ++j) pool.features(row, j) = means[c][j] + normal(rng);
      pool.labels.push_back(static_cast<int>(c));
    }
  }
  return pool;
}

namespace {

struct SplitShare {
  std::vector<std::size_t> key;
  std::vector<std::size_t> other;
};

// Shares of `m` items proportional to weights; the last share takes the rest.
std::array<std::size_t, 3> proportional(std::size_t m, const std::array<std::size_t, 3>& weights) {
  const double total = static_cast<double>(weights[0] + weights[1] + weights[2]);
  std::array<std::size_t, 3> out{};
  std::size_t used = 0;
  for (int i = 0; i < 2; ++i) {
    out[i] = static_cast<std::size_t>(std::llround(static_cast<double>(m) * static_cast<double>(weights[i]) / total));
    out[i] = std::min(out[i], m - used);
    used += out[i];
  }
  out[2] = m - used;
  return out;
}

std::vector<Bag> draw_split(const InstancePool& pool, const BagSpec& spec, const SplitShare& share, Split split,
                            std::size_t n_bags, Rng& rng) {
  const std::size_t n = spec.instances_per_bag;
  const std::size_t keys = spec.key_count();
  const auto n_pos = static_cast<std::size_t>(std::llround(spec.positive_bag_fraction * static_cast<double>(n_bags)));
  const std::size_t n_neg = n_bags - n_pos;

  const std::size_t need_key = n_pos > 0 ? keys : 0;
  const std::size_t need_other = n_neg > 0 ? n : (n_pos > 0 ? n - keys : 0);
  if (share.key.size() < need_key || share.other.size() < need_other) {
    throw ConfigError(std::string("insufficient pool for ") + split_name(split) + " split: required " +
                      std::to_string(need_key) + " key and " + std::to_string(need_other) +
                      " non-key instances, available " + std::to_string(share.key.size()) + " key and " +
                      std::to_string(share.other.size()) + " non-key");
  }

  std::vector<int> labels(n_bags, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<Bag> bags;
  bags.reserve(n_bags);
  for (int label : labels) {
    std::vector<std::size_t> members;
    members.reserve(n);
    const std::size_t k = label ? keys : 0;
    for (std::size_t i : sample_without_replacement(share.key.size(), k, rng)) members.push_back(share.key[i]);
    for (std::size_t i : sample_without_replacement(share.other.size(), n - k, rng)) members.push_back(share.other[i]);
    std::shuffle(members.begin(), members.end(), rng);

    Bag bag;
    bag.instances = pool.features.gather_rows(members);
    bag.instance_labels.reserve(n);
    for (std::size_t idx : members) bag.instance_labels.push_back(pool.labels[idx] == spec.key_class ? 1 : 0);
    bag.label = model::bag_label(bag.instance_labels);
    bag.split = split;
    bag.pool_indices = std::move(members);
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace

Dataset build_bags(const InstancePool& pool, const BagSpec& spec) {
  spec.validate();
  if (pool.size() == 0) throw ConfigError("insufficient pool: the instance pool is empty");
  Rng rng = make_rng(spec.seed, "dataset");

  // Per-class stratified partition into disjoint split shares.
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool.labels[i]].push_back(i);
  const std::array<std::size_t, 3> weights{spec.n_train_bags, spec.n_val_bags, spec.n_test_bags};
  std::array<SplitShare, 3> shares;
  for (auto& [cls, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto sizes = proportional(members.size(), weights);
    std::size_t at = 0;
    for (int s = 0; s < 3; ++s) {
      auto& dst = cls == spec.key_class ? shares[s].key : shares[s].other;
      dst.insert(dst.end(), members.begin() + static_cast<std::ptrdiff_t>(at),
                 members.begin() + static_cast<std::ptrdiff_t>(at + sizes[s]));
      at += sizes[s];
    }
  }
  for (auto& share : shares) {
    std::sort(share.key.begin(), share.key.end());
    std::sort(share.other.begin(), share.other.end());
  }

  Dataset ds;
  ds.spec = spec;
  ds.train = draw_split(pool, spec, shares[0], Split::Train, spec.n_train_bags, rng);
  ds.validation = draw_split(pool, spec, shares[1], Split::Validation, spec.n_val_bags, rng);
  ds.test = draw_split(pool, spec, shares[2], Split::Test, spec.n_test_bags, rng);
  return ds;
}

Dataset make_synthetic_dataset(const BagSpec& spec, std::size_t input_dim, std::size_t n_classes) {
  spec.validate();
  if (spec.key_class < 0 || static_cast<std::size_t>(spec.key_class) >= n_classes) {
    throw ConfigError("key_class " + std::to_string(spec.key_class) + " outside [0, " + std::to_string(n_classes - 1) +
                      "]");
  }
  const double total = static_cast<double>(spec.n_train_bags + spec.n_val_bags + spec.n_test_bags);
  const double smallest = static_cast<double>(std::min({spec.n_train_bags, spec.n_val_bags, spec.n_test_bags}));
  const double per_split = std::max(static_cast<double>(spec.key_count()),
                                    static_cast<double>(spec.instances_per_bag) / static_cast<double>(n_classes - 1));
  // Enough distinct instances that bags rarely share members, as with a large
  // digit corpus, and at least enough for the smallest split.
  const double bag_instances = total * static_cast<double>(spec.instances_per_bag);
  const auto per_class = static_cast<std::size_t>(std::ceil(
                             std::max(1.5 * per_split * total / smallest, 1.25 * bag_instances / static_cast<double>(n_classes)))) +
                         8;
  return build_bags(make_synthetic_pool(spec.seed, n_classes, input_dim, per_class), spec);
}

}  // namespace abmil::data
