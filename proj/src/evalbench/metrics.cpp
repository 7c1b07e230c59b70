#include <algorithm>
#include <chrono>
#include <numeric>
#include <stdexcept>

#include "abmil/evalbench.hpp"

namespace abmil::eval {

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("roc_auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("AUC undefined: labels contain a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the rank sum keeps midranks integral.
  std::size_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const std::size_t twice_midrank = (i + 1) + (j + 1);
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) twice_rank_sum += twice_midrank;
    }
    i = j + 1;
  }
  // U = R_pos - n_pos (n_pos + 1) / 2, doubled.
  const std::size_t twice_u = twice_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

EvalResult evaluate(const model::ParamSet& params, std::span<const data::Bag> bags, double inference_sample_percent,
                    Rng& rng) {
  if (!(inference_sample_percent > 0.0) || inference_sample_percent > 100.0) {
    throw std::invalid_argument("inference sample percent must lie in (0, 100]");
  }
  const auto start = std::chrono::steady_clock::now();
  EvalResult out;
  out.sample_percent = inference_sample_percent;
  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;
  std::size_t correct = 0;
  double loss = 0.0;
  double per_bag_sum = 0.0;
  std::size_t per_bag_count = 0;

  for (const data::Bag& bag : bags) {
    const std::size_t n = bag.size();
    BagRecord rec;
    rec.label = bag.label;
    model::BagForwardResult fwd;
    if (inference_sample_percent < 100.0) {
      const auto picked = sample_without_replacement(n, sample_count(n, inference_sample_percent), rng);
      fwd = model::forward_bag(params, bag.instances.gather_rows(picked));
      for (std::size_t i : picked) rec.instance_labels.push_back(bag.instance_labels[i]);
    } else {
      fwd = model::forward_bag(params, bag.instances);
      rec.instance_labels = bag.instance_labels;
    }
    rec.score = fwd.bag_score;
    rec.attention = std::move(fwd.attention_weights);
    if ((rec.score >= 0.5 ? 1 : 0) == bag.label) ++correct;
    loss += model::bce_loss(rec.score, bag.label);

    pooled_scores.insert(pooled_scores.end(), rec.attention.begin(), rec.attention.end());
    pooled_labels.insert(pooled_labels.end(), rec.instance_labels.begin(), rec.instance_labels.end());
    const auto pos = std::count(rec.instance_labels.begin(), rec.instance_labels.end(), 1);
    if (pos > 0 && static_cast<std::size_t>(pos) < rec.instance_labels.size()) {
      per_bag_sum += roc_auc(rec.attention, rec.instance_labels);
      ++per_bag_count;
    }
    out.bags.push_back(std::move(rec));
  }

  if (!bags.empty()) {
    out.bag_accuracy = static_cast<double>(correct) / static_cast<double>(bags.size());
    out.mean_loss = loss / static_cast<double>(bags.size());
  }
  const auto pos = std::count(pooled_labels.begin(), pooled_labels.end(), 1);
  if (pos > 0 && static_cast<std::size_t>(pos) < pooled_labels.size()) out.instance_auc = roc_auc(pooled_scores, pooled_labels);
  if (per_bag_count > 0) out.per_bag_auc = per_bag_sum / static_cast<double>(per_bag_count);
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace abmil::eval
