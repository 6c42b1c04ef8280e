// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace llmkt::numcore {

namespace {
Real eval_scalar(const std::function<Tensor()>& fn) {
    NoGradGuard guard;
    const Real v = fn().item();
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: function value is not finite");
    return v;
}
}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, Real h, Real floor,
                           std::size_t max_entries) {
    if (!(h > 0.0)) throw ContractError("grad_check: step must be positive");
    for (auto& p : params) p.zero_grad();
    Tensor loss = fn();
    if (!std::isfinite(loss.item())) throw std::runtime_error("grad_check: function value is not finite");
    backward(loss);
    std::vector<std::vector<Real>> analytic;
    for (auto& p : params) analytic.push_back(p.grad());

    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].mutable_data();
        const std::size_t n = data.size();
        const std::size_t stride = (max_entries == 0 || n <= max_entries) ? 1 : (n + max_entries - 1) / max_entries;
        for (std::size_t j = 0; j < n; j += stride) {
            const Real saved = data[j];
            data[j] = saved + h;
            const Real fp = eval_scalar(fn);
            data[j] = saved - h;
            const Real fm = eval_scalar(fn);
            data[j] = saved;
            const Real num = (fp - fm) / (2.0 * h);
            const Real ana = analytic[pi][j];
            if (!std::isfinite(ana)) throw std::runtime_error("grad_check: analytic gradient is not finite");
            const Real err = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
            ++res.checked;
            if (err > res.max_rel_error) {
                res.max_rel_error = err;
                res.worst_param = pi;
                res.worst_index = j;
                res.analytic = ana;
                res.numeric = num;
            }
        }
    }
    for (auto& p : params) p.zero_grad();
    return res;
}

}  // namespace llmkt::numcore
