#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mixseg/errors.hpp"
#include "mixseg/tensor.hpp"

namespace mixseg {

// Adam with bias correction. Moment stores are kept aligned with the caller's
// parameter list; lr/beta defaults follow the training setup this toolkit
// targets (lr 1e-4, beta1 0.9, beta2 0.999).
template <typename T>
struct AdamState {
  std::int64_t step_count = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  T lr = T(1e-4);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<TensorPtr<T>>& params, T lr = T(1e-4), T beta1 = T(0.9),
                             T beta2 = T(0.999), T epsilon = T(1e-8)) {
  AdamState<T> state;
  state.lr = lr;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.epsilon = epsilon;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p->data.size(), T(0));
    state.v.emplace_back(p->data.size(), T(0));
  }
  return state;
}

// One optimizer step over all parameters, consuming the gradients currently
// stored on them (a missing gradient buffer counts as zero).
template <typename T>
void adam_step(const std::vector<TensorPtr<T>>& params, AdamState<T>& state) {
  if (params.size() != state.m.size() || params.size() != state.v.size()) {
    throw DimensionError("adam_step parameter count " + std::to_string(params.size()) +
                         " does not match state slots " + std::to_string(state.m.size()));
  }
  state.step_count += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step_count)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step_count)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.data.size()) {
      throw DimensionError("adam_step state slot " + std::to_string(i) + " has " + std::to_string(m.size()) +
                           " elements but parameter has " + std::to_string(p.data.size()));
    }
    const bool has_grad = p.grad.size() == p.data.size();
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      const T g = has_grad ? p.grad[j] : T(0);
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g * g;
      const T m_hat = m[j] / bc1;
      const T v_hat = v[j] / bc2;
      p.data[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace mixseg
