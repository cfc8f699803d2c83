#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "salt/tensor.hpp"

namespace salt::testutil {

inline std::vector<double> random_values(std::mt19937_64& rng, size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    x = lo + (hi - lo) * u;
  }
  return v;
}

inline Tensor random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = false,
                            double lo = -1.0, double hi = 1.0) {
  return Tensor(shape, random_values(rng, static_cast<size_t>(shape_numel(shape)), lo, hi),
                requires_grad);
}

/// Central finite differences of a recomputable scalar function w.r.t. one
/// parameter tensor. The function must rebuild its forward pass on every
/// call so that edits to `param` take effect.
inline std::vector<double> finite_difference(Tensor& param, const std::function<double()>& fn,
                                             double step = 1e-5) {
  std::vector<double> grad(static_cast<size_t>(param.size()));
  auto w = param.values_mut();
  for (size_t i = 0; i < grad.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + step;
    const double up = fn();
    w[i] = keep - step;
    const double down = fn();
    w[i] = keep;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

/// Relative error with an absolute floor for near-zero gradients.
inline double grad_rel_err(double analytic, double numeric) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < 1e-6) return std::abs(analytic - numeric) < 1e-7 ? 0.0 : 1.0;
  return std::abs(analytic - numeric) / mag;
}

inline double max_grad_rel_err(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, grad_rel_err(analytic[i], numeric[i]));
  }
  return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace salt::testutil
