#include "pirt/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pirt/error.hpp"

namespace pirt {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  Tensor y = f();
  if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
  double v = y.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function is non-finite near the check point");
  return v;
}

}  // namespace

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps, std::size_t max_coords) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    TapeGuard guard(tape);
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: function must return a scalar");
    if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite value at the check point");
    tape.backward(y);
  }
  double worst = 0.0;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto data = leaf.mutable_data();
    std::size_t n = data.size();
    std::size_t step = (max_coords == 0 || max_coords >= n) ? 1 : n / max_coords;
    for (std::size_t i = 0; i < n; i += step) {
      double orig = data[i];
      data[i] = orig + eps;
      double up = eval_scalar(f);
      data[i] = orig - eps;
      double down = eval_scalar(f);
      data[i] = orig;
      double numeric = (up - down) / (2.0 * eps);
      double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
    leaf.zero_grad();
  }
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x.detach();
  std::vector<Tensor> leaves{leaf};
  return grad_check([&]() { return f(leaves[0]); }, leaves, eps);
}

}  // namespace pirt
