#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "abmil/tensor.hpp"

namespace abmil::testing {

using graph::Tensor;

inline Tensor random_tensor(graph::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = normal(rng);
  return t;
}

// Central differences of f over every entry of every tensor in `inputs`.
inline std::vector<Tensor> numeric_grad(const std::function<double(const std::vector<Tensor>&)>& f,
                                        std::vector<Tensor> inputs, double eps = 1e-6) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor g(inputs[k].shape());
    for (std::size_t j = 0; j < inputs[k].numel(); ++j) {
      const double saved = inputs[k][j];
      inputs[k][j] = saved + eps;
      const double up = f(inputs);
      inputs[k][j] = saved - eps;
      const double down = f(inputs);
      inputs[k][j] = saved;
      g[j] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

// Relative error that becomes absolute (scaled by 1e-2) for small derivatives.
inline double fd_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-2});
}

}  // namespace abmil::testing
