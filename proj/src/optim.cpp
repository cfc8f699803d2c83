#include "salt/optim.hpp"

#include <cmath>
#include <string>

namespace salt {

AdamState AdamState::for_params(std::span<const Tensor> params, double lr) {
  AdamState st;
  st.lr = lr;
  st.first_moment.reserve(params.size());
  st.second_moment.reserve(params.size());
  for (const Tensor& p : params) {
    st.first_moment.emplace_back(static_cast<size_t>(p.size()), 0.0);
    st.second_moment.emplace_back(static_cast<size_t>(p.size()), 0.0);
  }
  return st;
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.first_moment.size() || params.size() != state.second_moment.size()) {
    throw DimensionError("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.size() != static_cast<size_t>(p.size())) {
      throw DimensionError("adam_step: moment size " + std::to_string(m.size()) +
                           " does not match parameter " + shape_str(p.shape()));
    }
    std::span<double> w = p.values_mut();
    if (p.has_grad()) {
      std::span<const double> g = p.grad();
      for (size_t i = 0; i < m.size(); ++i) {
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        w[i] -= state.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
      }
    } else {
      for (size_t i = 0; i < m.size(); ++i) {
        m[i] *= state.beta1;
        v[i] *= state.beta2;
        w[i] -= state.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
      }
    }
  }
}

}  // namespace salt
