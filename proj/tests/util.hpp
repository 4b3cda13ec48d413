#pragma once

#include <random>
#include <vector>

#include "pirt/ops.hpp"
#include "pirt/tensor.hpp"

namespace testutil {

inline pirt::Tensor random_tensor(const pirt::Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::vector<double> v(pirt::shape_numel(shape));
  for (auto& x : v) x = (2.0 * pirt::uniform01(rng) - 1.0) * scale;
  return pirt::Tensor(shape, std::move(v));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testutil
