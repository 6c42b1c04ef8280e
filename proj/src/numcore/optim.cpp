// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace llmkt::numcore {

OptimState OptimState::for_params(const std::vector<Tensor>& params, AdamConfig config) {
    OptimState s;
    s.config = config;
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.numel(), 0.0);
        s.second_moment.emplace_back(p.numel(), 0.0);
    }
    return s;
}

void adam_step(OptimState& state, std::vector<Tensor>& params, const std::vector<std::vector<Real>>& grads, Real lr) {
    if (!(lr > 0.0)) throw ContractError("adam_step: learning rate must be positive");
    if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
        throw ContractError("adam_step: parameter, gradient and state counts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].size() != params[i].numel() || state.first_moment[i].size() != params[i].numel()) {
            throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }
    const auto& c = state.config;
    ++state.step;
    const Real t = static_cast<Real>(state.step);
    const Real bias1 = 1.0 - std::pow(c.beta1, t);
    const Real bias2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i].mutable_data();
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            w[j] -= lr * c.weight_decay * w[j];
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const Real mhat = m[j] / bias1;
            const Real vhat = v[j] / bias2;
            w[j] -= lr * mhat / (std::sqrt(vhat) + c.eps);
        }
    }
}

void adam_step(OptimState& state, std::vector<Tensor>& params, Real lr) {
    std::vector<std::vector<Real>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(p.grad());
    adam_step(state, params, grads, lr);
}

Real cosine_lr(std::int64_t step, std::int64_t total_steps, Real base_lr) {
    if (total_steps <= 0) throw ContractError("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) {
        throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                            "]");
    }
    const Real frac = static_cast<Real>(step) / static_cast<Real>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void zero_grads(std::vector<Tensor>& params) {
    for (auto& p : params) p.zero_grad();
}

}  // namespace llmkt::numcore
