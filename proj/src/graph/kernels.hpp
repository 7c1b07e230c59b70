#pragma once

// Plain tensor kernels shared by the forward ops and the backward rules.

#include <cstddef>
#include <tuple>

#include "abmil/tensor.hpp"

namespace abmil::graph::kernels {

// a [m,k] * b [k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m,n] * b^T where b is [k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T * b where a is [m,k], b is [m,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Splits a shape around `axis` into (outer, length, inner) extents.
std::tuple<std::size_t, std::size_t, std::size_t> axis_extents(const Shape& shape, std::size_t axis);

}  // namespace abmil::graph::kernels
