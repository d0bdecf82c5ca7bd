#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "t2c/tensor.hpp"

namespace t2c {

/// Compares reverse-mode gradients of a scalar function against central
/// differences. `f` must read `params` (shared handles) and be deterministic.
/// Returns max over all coordinates of
///   |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double gradient_check(const std::function<Tensor<double>()>& f,
                             std::vector<Tensor<double>> params, double eps = 1e-4) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  {
    Tape<double> tape;
    Tensor<double> loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    auto g = p.grad_mut();
    analytic.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f().item();
      values[i] = saved - eps;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace t2c
