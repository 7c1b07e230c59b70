#include "abmil/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "abmil/errors.hpp"
#include "abmil/evalbench.hpp"
#include "abmil/rng.hpp"

namespace abmil::verify {

using graph::Tape;
using graph::Tensor;
using graph::Var;
using model::Mode;
using model::ParamSet;

Scale parse_scale(const std::string& text) {
  if (text == "smoke") return Scale::Smoke;
  if (text == "full") return Scale::Full;
  throw ConfigError("unknown scale '" + text + "' (accepted: smoke, full)");
}

const char* scale_name(Scale scale) { return scale == Scale::Smoke ? "smoke" : "full"; }

std::string format(const CheckResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %s measured=%.6g %s %.6g", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.measured,
                r.relation.c_str(), r.tolerance);
  std::string out = buf;
  if (!r.note.empty()) out += " (" + r.note + ")";
  return out;
}

double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("pairwise_auc: length mismatch");
  std::size_t twice_wins = 0, n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) ++n_pos;
    else ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("AUC undefined: labels contain a single class");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) twice_wins += 2;
      else if (scores[i] == scores[j]) twice_wins += 1;
    }
  }
  return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<Tensor> per_instance_encoder_grad(const ParamSet& params, const Tensor& instances, int label) {
  if (params.encoder.batch_norm()) throw std::invalid_argument("per-instance decomposition needs an encoder without BN");
  ParamSet p = params;

  // g_i = dL/dz_i with the pooler held fixed.
  const Tensor z = model::encode_infer(p.encoder, instances);
  Tensor dz;
  {
    Tape tape;
    Var zv = tape.input(z, "z");
    auto pooled = model::attention_pool(p.pooler, zv, &tape, graph::LeafKind::Constant);
    Var loss = model::bce_loss(pooled.score, label);
    dz = graph::backward(tape, loss).at(zv);
  }

  std::vector<Tensor> total;
  for (const Tensor* t : p.encoder_trainables()) total.emplace_back(t->shape());
  for (std::size_t i = 0; i < instances.rows(); ++i) {
    Tape tape;
    Var x = tape.constant(instances.rows_slice(i, i + 1), "x_i");
    auto enc = model::encode(p.encoder, x, Mode::Train, &tape);
    Var surrogate = graph::sum(graph::mul(enc.features, tape.constant(dz.rows_slice(i, i + 1), "g_i")));
    const auto grads = graph::backward(tape, surrogate);
    for (std::size_t t = 0; t < total.size(); ++t) {
      const Tensor& term = grads.at(enc.param_leaves[t]);
      for (std::size_t j = 0; j < term.numel(); ++j) total[t][j] += term[j];
    }
  }
  return total;
}

namespace {

double bag_loss(ParamSet p, const Tensor& instances, int label) {
  auto enc = model::encode(p.encoder, Var(instances), Mode::Train);
  auto pooled = model::attention_pool(p.pooler, enc.features);
  return model::bce_loss(pooled.score.value().item(), label);
}

Tensor flat(const std::vector<Tensor>& parts) {
  std::vector<double> out;
  for (const Tensor& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());
  if (out.empty()) out.push_back(0.0);
  const std::size_t n = out.size();
  return Tensor({n}, std::move(out));
}

Tensor random_instances(std::size_t n, std::size_t dim, Rng& rng, double shift = 0.0) {
  std::normal_distribution<double> normal(shift, 1.0);
  Tensor x({n, dim});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = normal(rng);
  return x;
}

data::Dataset desk_dataset(std::uint64_t seed) {
  data::BagSpec spec;
  spec.seed = substream_seed(seed, "dataset");
  return data::make_synthetic_dataset(spec, model::ModelConfig{}.input_dim);
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

}  // namespace

std::vector<double> finite_difference_grad(const ParamSet& params, const Tensor& instances, int label, double eps) {
  ParamSet p = params;
  std::vector<Tensor*> targets = p.encoder_trainables();
  for (Tensor* t : p.pooler_trainables()) targets.push_back(t);
  std::vector<double> out;
  for (Tensor* t : targets) {
    for (std::size_t j = 0; j < t->numel(); ++j) {
      const double saved = (*t)[j];
      (*t)[j] = saved + eps;
      const double up = bag_loss(p, instances, label);
      (*t)[j] = saved - eps;
      const double down = bag_loss(p, instances, label);
      (*t)[j] = saved;
      out.push_back((up - down) / (2.0 * eps));
    }
  }
  return out;
}

double gradient_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

CheckResult check_gradient_equivalence(std::size_t epochs, std::uint64_t seed) {
  CheckResult r{"gradient_equivalence", false, 0.0, "<", 1e-10, {}};
  const data::Dataset ds = desk_dataset(seed);
  model::ModelConfig mc;
  ParamSet params = model::init_params(mc, substream_seed(seed, "init"));
  train::AdamState adam = train::AdamState::zeros_like(params);
  const train::TrainConfig tc;
  Rng shuffle = make_rng(seed, "shuffle");
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double worst_theta = 0.0, worst_phi = 0.0;
  std::size_t steps = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle);
    for (std::size_t b : order) {
      const data::Bag& bag = ds.train[b];
      const auto full = train::full_bag_grad(params, bag.instances, bag.label);
      const auto acc =
          train::accum_grad(params, bag.instances, bag.label, train::chunk_size_for(bag.size(), 25.0));
      worst_theta = std::max(worst_theta, graph::relative_l2(full.grads.flat_encoder(), acc.grads.flat_encoder()));
      worst_phi = std::max(worst_phi, graph::relative_l2(full.grads.flat_pooler(), acc.grads.flat_pooler()));
      train::adam_step(params, full.grads, tc.learning_rate, tc.weight_decay, adam);
      ++steps;
    }
  }
  r.measured = std::max(worst_theta, worst_phi);
  r.passed = r.measured < r.tolerance;
  r.note = std::to_string(steps) + " steps, alpha 25%, dtheta " + sci(worst_theta) + ", dphi " + sci(worst_phi);
  return r;
}

CheckResult check_instance_decomposition(std::size_t pairs, std::uint64_t seed) {
  CheckResult r{"instance_decomposition", false, 0.0, "<", 1e-10, {}};
  Rng rng = make_rng(seed, "decomposition");
  auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  for (std::size_t k = 0; k < pairs; ++k) {
    model::ModelConfig mc;
    mc.input_dim = pick(1, 6);
    mc.widths.assign(pick(1, 3), 0);
    for (auto& w : mc.widths) w = pick(1, 8);
    mc.attention_dim = pick(1, 6);
    mc.final_activation = pick(0, 1) == 1;
    ParamSet params = model::init_params(mc, rng());
    const std::size_t n = pick(1, 16);
    const Tensor x = random_instances(n, mc.input_dim, rng);
    const int label = static_cast<int>(pick(0, 1));
    const auto full = train::full_bag_grad(params, x, label);
    const auto oracle = per_instance_encoder_grad(params, x, label);
    r.measured = std::max(r.measured, graph::relative_l2(full.grads.flat_encoder(), flat(oracle)));
  }
  r.passed = r.measured < r.tolerance;
  r.note = std::to_string(pairs) + " random (model, bag) pairs, n <= 16";
  return r;
}

CheckResult check_finite_differences(std::uint64_t seed) {
  CheckResult r{"finite_differences", false, 0.0, "<", 1e-6, {}};
  Rng rng = make_rng(seed, "finite_differences");
  std::size_t checked = 0, max_params = 0;
  for (bool bn : {false, true}) {
    model::ModelConfig mc;
    mc.input_dim = 3;
    mc.widths = {4, 3};
    mc.attention_dim = 2;
    mc.batch_norm = bn;
    for (int label : {0, 1}) {
      ParamSet params = model::init_params(mc, rng());
      max_params = std::max(max_params, params.trainable_count());
      const Tensor x = random_instances(6, mc.input_dim, rng);
      ParamSet work = params;
      const auto g = train::full_bag_grad(work, x, label);
      const Tensor analytic = graph::Tensor::vector(
          [&] {
            std::vector<double> v;
            for (const Tensor& t : g.grads.encoder) v.insert(v.end(), t.data().begin(), t.data().end());
            for (const Tensor& t : g.grads.pooler) v.insert(v.end(), t.data().begin(), t.data().end());
            return v;
          }());
      const auto numeric = finite_difference_grad(params, x, label, 1e-6);
      for (std::size_t i = 0; i < numeric.size(); ++i) {
        r.measured = std::max(r.measured, gradient_error(analytic[i], numeric[i], 1e-2));
        ++checked;
      }
    }
  }
  r.passed = r.measured < r.tolerance;
  r.note = std::to_string(checked) + " scalars, eps 1e-6, models of <= " + std::to_string(max_params) +
           " parameters, absolute below 1e-2";
  return r;
}

CheckResult check_bn_discrepancy(std::uint64_t seed) {
  CheckResult r{"bn_discrepancy", false, 0.0, ">", 1e-3, {}};
  Rng rng = make_rng(seed, "bn_discrepancy");
  // Two clusters so that chunk statistics differ from bag statistics.
  const std::size_t n = 16, k = 4;
  model::ModelConfig mc;
  Tensor x = random_instances(n, mc.input_dim, rng);
  for (std::size_t i = n / 2; i < n; ++i)
    for (std::size_t j = 0; j < mc.input_dim; ++j) x(i, j) += 3.0;
  const std::uint64_t init_seed = rng();

  mc.batch_norm = true;
  ParamSet with_bn = model::init_params(mc, init_seed);
  ParamSet with_bn_copy = with_bn;
  const auto full_bn = train::full_bag_grad(with_bn, x, 1);
  const auto acc_bn = train::accum_grad(with_bn_copy, x, 1, k);
  r.measured = graph::relative_l2(full_bn.grads.flat_encoder(), acc_bn.grads.flat_encoder());

  mc.batch_norm = false;
  ParamSet plain = model::init_params(mc, init_seed);
  const auto full = train::full_bag_grad(plain, x, 1);
  const auto acc = train::accum_grad(plain, x, 1, k);
  const double off = std::max(graph::relative_l2(full.grads.flat_encoder(), acc.grads.flat_encoder()),
                              graph::relative_l2(full.grads.flat_pooler(), acc.grads.flat_pooler()));

  const bool off_ok = off < 1e-10;
  r.passed = r.measured > r.tolerance && off_ok;
  r.note = std::string(r.measured > r.tolerance ? "discrepancy confirmed" : "no discrepancy") + "; BN off rel " +
           sci(off) + (off_ok ? " < 1e-10" : " >= 1e-10");
  return r;
}

CheckResult check_memory_scaling(std::uint64_t seed) {
  CheckResult r{"memory_scaling", false, 0.0, "<", 0.05, {}};
  Rng rng = make_rng(seed, "memory");
  model::ModelConfig mc;
  ParamSet params = model::init_params(mc, rng());
  const std::size_t k = 8;
  std::vector<std::size_t> ns{8, 32, 128}, accum_peak, full_peak;
  for (std::size_t n : ns) {
    const Tensor x = random_instances(n, mc.input_dim, rng);
    accum_peak.push_back(train::accum_grad(params, x, 1, k).report.encoder_peak_scalars);
    full_peak.push_back(train::full_bag_grad(params, x, 1).report.encoder_peak_scalars);
  }
  const bool flat_accum = std::all_of(accum_peak.begin(), accum_peak.end(), [&](std::size_t v) { return v == accum_peak[0]; });
  for (std::size_t i = 1; i < ns.size(); ++i) {
    const double ratio = static_cast<double>(full_peak[i]) / static_cast<double>(full_peak[0]);
    const double expected = static_cast<double>(ns[i]) / static_cast<double>(ns[0]);
    r.measured = std::max(r.measured, std::abs(ratio / expected - 1.0));
  }
  r.passed = flat_accum && r.measured < r.tolerance && accum_peak[0] > 0;
  std::string accum = "accum k=8 encoder peak";
  for (auto v : accum_peak) accum += " " + std::to_string(v);
  std::string full = "full-bag";
  for (auto v : full_peak) full += " " + std::to_string(v);
  r.note = accum + (flat_accum ? " (constant)" : " (NOT constant)") + "; " + full + " for n = 8 32 128";
  return r;
}

CheckResult check_forward_count_and_time(std::uint64_t seed) {
  CheckResult r{"forward_count_and_time", false, 0.0, ">", 1.0, {}};
  Rng rng = make_rng(seed, "timing");
  model::ModelConfig mc;
  ParamSet params = model::init_params(mc, rng());
  const std::size_t n = 128;
  const Tensor x = random_instances(n, mc.input_dim, rng);
  const std::size_t k = train::chunk_size_for(n, 25.0);
  bool counts_ok = true;
  double full_ms = 0.0, accum_ms = 0.0;
  // Warm-up, then interleaved repetitions.
  train::full_bag_grad(params, x, 1);
  train::accum_grad(params, x, 1, k);
  for (int rep = 0; rep < 20; ++rep) {
    const auto full = train::full_bag_grad(params, x, 1);
    const auto acc = train::accum_grad(params, x, 1, k);
    counts_ok = counts_ok && full.report.forward_count == n && acc.report.forward_count == 2 * n;
    full_ms += full.report.wall_ms;
    accum_ms += acc.report.wall_ms;
  }
  r.measured = accum_ms / full_ms;
  r.passed = counts_ok && r.measured > r.tolerance;
  r.note = std::string("accum/full wall-time ratio at alpha 25%, n=128; forward counts ") +
           (counts_ok ? "2n vs n" : "WRONG");
  return r;
}

CheckResult check_full_chunk_equivalence(std::size_t epochs, std::uint64_t seed) {
  CheckResult r{"full_chunk_equivalence", false, 0.0, "<", 1e-9, {}};
  const data::Dataset ds = desk_dataset(seed);
  train::TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = seed;
  tc.strategy = train::Strategy::FullBag;
  const auto full = train::train(ds, tc, model::ModelConfig{});
  tc.strategy = train::Strategy::Accumulate;
  tc.alpha_percent = 100.0;
  const auto acc = train::train(ds, tc, model::ModelConfig{});
  auto rel = [](double a, double b) {
    const double m = std::max(std::abs(a), std::abs(b));
    return m == 0.0 ? 0.0 : std::abs(a - b) / m;
  };
  for (std::size_t e = 0; e < epochs; ++e) {
    r.measured = std::max({r.measured, rel(full.history[e].train_loss, acc.history[e].train_loss),
                           rel(full.history[e].val_loss, acc.history[e].val_loss)});
  }
  const bool same_best = full.best_epoch == acc.best_epoch;
  r.passed = r.measured < r.tolerance && same_best;
  r.note = std::to_string(epochs) + " epochs; best epoch " + std::to_string(full.best_epoch) + " vs " +
           std::to_string(acc.best_epoch);
  return r;
}

CheckResult check_auc_oracle(std::size_t trials, std::size_t max_length, std::uint64_t seed) {
  CheckResult r{"auc_oracle", false, 0.0, "==", 0.0, {}};
  Rng rng = make_rng(seed, "auc");
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, std::max<std::size_t>(2, max_length))(rng);
    std::vector<int> labels(n);
    for (auto& y : labels) y = static_cast<int>(rng() & 1U);
    labels[0] = 0;
    labels[1] = 1;
    std::shuffle(labels.begin(), labels.end(), rng);
    // Coarse grids produce many ties; every other trial is continuous.
    const int levels = t % 2 == 0 ? std::uniform_int_distribution<int>(1, 10)(rng) : 0;
    std::vector<double> scores(n);
    for (auto& s : scores) {
      s = levels > 0 ? static_cast<double>(std::uniform_int_distribution<int>(0, levels)(rng)) / levels
                     : std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    }
    if (eval::roc_auc(scores, labels) != pairwise_auc(scores, labels)) ++mismatches;
  }
  r.measured = static_cast<double>(mismatches);
  r.passed = mismatches == 0;
  r.note = std::to_string(trials) + " random inputs of length <= " + std::to_string(max_length);
  return r;
}

CheckResult check_protocol_fidelity(std::uint64_t seed) {
  CheckResult r{"protocol_fidelity", false, 0.0, "==", 0.0, {}};
  data::BagSpec spec = data::BagSpec::full_scale();
  spec.seed = seed;
  const data::Dataset ds = data::make_synthetic_dataset(spec, 8);
  const std::size_t keys = spec.key_count();
  std::size_t violations = 0, positives = 0;
  std::vector<std::set<std::size_t>> used(3);
  for (data::Split s : {data::Split::Train, data::Split::Validation, data::Split::Test}) {
    for (const data::Bag& bag : ds.split(s)) {
      const auto k = static_cast<std::size_t>(std::count(bag.instance_labels.begin(), bag.instance_labels.end(), 1));
      if (bag.size() != spec.instances_per_bag) ++violations;
      if (bag.label != model::bag_label(bag.instance_labels)) ++violations;
      if (bag.label == 1) {
        ++positives;
        if (k != keys) ++violations;
      } else if (k != 0) {
        ++violations;
      }
      const std::set<std::size_t> unique(bag.pool_indices.begin(), bag.pool_indices.end());
      if (unique.size() != bag.size()) ++violations;
      used[static_cast<std::size_t>(s)].insert(unique.begin(), unique.end());
    }
  }
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = a + 1; b < 3; ++b)
      for (std::size_t idx : used[a]) violations += used[b].count(idx);
  r.measured = static_cast<double>(violations);
  r.passed = violations == 0 && ds.train.size() == 100 && positives > 0;
  r.note = std::to_string(positives) + " positive bags, " + std::to_string(keys) + " key instances of " +
           std::to_string(spec.instances_per_bag) + " expected in each";
  return r;
}

std::vector<CheckResult> run_suite(Scale scale, std::uint64_t seed) {
  const bool full = scale == Scale::Full;
  std::vector<std::function<CheckResult()>> checks{
      [&] { return check_gradient_equivalence(full ? 30 : 10, seed); },
      [&] { return check_instance_decomposition(full ? 1000 : 100, seed); },
      [&] { return check_finite_differences(seed); },
      [&] { return check_bn_discrepancy(seed); },
      [&] { return check_memory_scaling(seed); },
      [&] { return check_forward_count_and_time(seed); },
      [&] { return check_full_chunk_equivalence(full ? 300 : 30, seed); },
      [&] { return check_auc_oracle(full ? 10000 : 1000, 200, seed); },
      [&] { return check_protocol_fidelity(seed); },
  };
  static const char* names[] = {"gradient_equivalence", "instance_decomposition", "finite_differences",
                                "bn_discrepancy",       "memory_scaling",         "forward_count_and_time",
                                "full_chunk_equivalence", "auc_oracle",          "protocol_fidelity"};
  std::vector<CheckResult> out;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    try {
      out.push_back(checks[i]());
    } catch (const std::exception& e) {
      CheckResult r;
      r.name = names[i];
      r.note = std::string("error: ") + e.what();
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace abmil::verify
