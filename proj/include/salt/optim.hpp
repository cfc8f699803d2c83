#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "salt/tensor.hpp"

namespace salt {

/// Adam optimizer state. Moment buffers are allocated per parameter and
/// must keep matching the parameter shapes for the lifetime of a run.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_params(std::span<const Tensor> params, double lr = 1e-3);
};

/// One bias-corrected Adam update, in place. Parameters without an
/// accumulated gradient are treated as having zero gradient.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace salt
