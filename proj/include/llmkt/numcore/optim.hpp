// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

struct AdamConfig {
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
    Real weight_decay = 1e-5;
};

/// Per-parameter AdamW moments. Moment i belongs to the i-th parameter of
/// the list the state was created for.
struct OptimState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<std::vector<Real>> first_moment;
    std::vector<std::vector<Real>> second_moment;

    static OptimState for_params(const std::vector<Tensor>& params, AdamConfig config = {});
};

/// One AdamW update with decoupled weight decay applied before the moment
/// step. `grads[i]` must have params[i].numel() entries.
void adam_step(OptimState& state, std::vector<Tensor>& params, const std::vector<std::vector<Real>>& grads, Real lr);
/// Same, reading each parameter's accumulated gradient (zero if none).
void adam_step(OptimState& state, std::vector<Tensor>& params, Real lr);

/// base_lr * 0.5 * (1 + cos(pi * step / total_steps)).
Real cosine_lr(std::int64_t step, std::int64_t total_steps, Real base_lr);

void zero_grads(std::vector<Tensor>& params);

}  // namespace llmkt::numcore
