#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abmil/bagdata.hpp"
#include "abmil/gradstrat.hpp"
#include "abmil/model.hpp"

namespace abmil::verify {

enum class Scale { Smoke, Full };
Scale parse_scale(const std::string& text);
const char* scale_name(Scale scale);

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  /// "<", ">" or "==" between measured and tolerance.
  std::string relation = "<";
  double tolerance = 0.0;
  std::string note;
};

/// "PASS <name> measured=<v> <relation> <tolerance> [note]"
std::string format(const CheckResult& result);

// Oracles. These share no code path with the production gradient or metric
// implementations beyond the forward operators.

/// O(n^2) pairwise AUC: (#pos>neg + 0.5 #ties) / (n_pos n_neg).
double pairwise_auc(std::span<const double> scores, std::span<const int> labels);

/// Encoder gradient as the sum of per-instance terms: g_i = dL/dz_i from the
/// pooler alone, then each instance encoded on its own tape with surrogate
/// loss <f(x_i), g_i>. Requires an encoder without batch normalization.
std::vector<graph::Tensor> per_instance_encoder_grad(const model::ParamSet& params, const graph::Tensor& instances,
                                                     int label);

/// Central differences of the full-bag loss for every trainable scalar, in
/// encoder-then-pooler order.
std::vector<double> finite_difference_grad(const model::ParamSet& params, const graph::Tensor& instances, int label,
                                           double eps);

/// |a - n| / max(|a|, |n|, floor): a relative error that degrades to an
/// absolute one below `floor`.
double gradient_error(double analytic, double numeric, double floor);

// Checks.

CheckResult check_gradient_equivalence(std::size_t epochs, std::uint64_t seed);
CheckResult check_instance_decomposition(std::size_t pairs, std::uint64_t seed);
CheckResult check_finite_differences(std::uint64_t seed);
CheckResult check_bn_discrepancy(std::uint64_t seed);
CheckResult check_memory_scaling(std::uint64_t seed);
CheckResult check_forward_count_and_time(std::uint64_t seed);
CheckResult check_full_chunk_equivalence(std::size_t epochs, std::uint64_t seed);
CheckResult check_auc_oracle(std::size_t trials, std::size_t max_length, std::uint64_t seed);
CheckResult check_protocol_fidelity(std::uint64_t seed);

std::vector<CheckResult> run_suite(Scale scale, std::uint64_t seed);

}  // namespace abmil::verify
