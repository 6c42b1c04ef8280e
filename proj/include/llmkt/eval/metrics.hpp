// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>
#include <stdexcept>

namespace llmkt::eval {

class MetricError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Rank-based (Mann-Whitney) AUC with tied scores credited 0.5.
/// Throws MetricError when lengths differ or only one class is present.
double auc(std::span<const double> scores, const std::vector<bool>& labels);

/// Fraction of examples with (score >= threshold) == label.
double acc(std::span<const double> scores, const std::vector<bool>& labels, double threshold = 0.5);

}  // namespace llmkt::eval
