#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pirt/tensor.hpp"

namespace pirt {

/// Max over coordinates of |analytic - central difference| / max(1, |central
/// difference|). `f` must return a scalar tensor and be deterministic.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-5);

/// Same check against leaves that `f` closes over (module parameters). The
/// leaves are perturbed in place and restored. `max_coords` > 0 limits the
/// coordinates checked per leaf to an evenly spaced subset.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps = 1e-5,
                  std::size_t max_coords = 0);

}  // namespace pirt
