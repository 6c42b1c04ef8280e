// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

struct GradCheckResult {
    Real max_rel_error = 0.0;
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    Real analytic = 0.0;
    Real numeric = 0.0;
    std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences, elementwise. The error of one entry is
/// |a - n| / max(|a|, |n|, floor); the floor keeps entries whose true
/// gradient is zero from dividing roundoff by zero.
///
/// `fn` must rebuild its graph on every call. At most `max_entries` entries
/// per parameter are probed (evenly strided) when nonzero.
GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, Real h = 1e-6,
                           Real floor = 1e-4, std::size_t max_entries = 0);

}  // namespace llmkt::numcore
