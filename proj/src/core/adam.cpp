#include "hypevents/core/adam.hpp"

#include <cmath>

#include "hypevents/core/error.hpp"

namespace hypevents {

AdamState AdamState::for_parameters(std::span<Parameter* const> params, AdamHyper hyper) {
  AdamState state;
  state.hyper = hyper;
  for (const Parameter* p : params) {
    state.m.emplace_back(p->value.shape());
    state.v.emplace_back(p->value.shape());
  }
  return state;
}

void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::dimension, "adam_step: state tracks " + std::to_string(state.m.size()) +
                                          " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    if (p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape() ||
        state.v[i].shape() != p.value.shape()) {
      throw Error(ErrorCode::dimension, "adam_step: shape mismatch for parameter '" + p.name +
                                            "' " + to_string(p.value.shape()));
    }
  }
  state.t += 1;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    auto value = p.value.data();
    const auto grad = p.grad.data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < value.size(); ++k) {
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * grad[k];
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * grad[k] * grad[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      value[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + h.epsilon);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace hypevents
