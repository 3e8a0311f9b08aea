#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hypevents/core/tape.hpp"

namespace hypevents {

struct AdamHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments per parameter plus the shared step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  static AdamState for_parameters(std::span<Parameter* const> params, AdamHyper hyper = {});
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. `learning_rate` overrides hyper.learning_rate for schedules.
void adam_step(std::span<Parameter* const> params, AdamState& state, double learning_rate);
inline void adam_step(std::span<Parameter* const> params, AdamState& state) {
  adam_step(params, state, state.hyper.learning_rate);
}

void zero_grads(std::span<Parameter* const> params);

}  // namespace hypevents
