// SPDX-License-Identifier: Apache-2.0
#include "llmkt/eval/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <vector>

namespace llmkt::eval {

double auc(std::span<const double> scores, const std::vector<bool>& labels) {
    if (scores.size() != labels.size()) throw MetricError("auc: scores and labels differ in length");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of positive ranks, with tied groups sharing their average rank.
    // Ranks are doubled to stay in integers until the final division.
    long double doubled_rank_sum = 0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        std::size_t pos_in_group = 0;
        for (std::size_t k = i; k < j; ++k) pos_in_group += labels[order[k]] ? 1 : 0;
        doubled_rank_sum += static_cast<long double>(pos_in_group) * static_cast<long double>(i + 1 + j);
        n_pos += pos_in_group;
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw MetricError("auc: labels contain a single class");
    const long double np = static_cast<long double>(n_pos);
    const long double u = doubled_rank_sum / 2 - np * (np + 1) / 2;
    return static_cast<double>(u / (np * static_cast<long double>(n_neg)));
}

double acc(std::span<const double> scores, const std::vector<bool>& labels, double threshold) {
    if (scores.size() != labels.size()) throw MetricError("acc: scores and labels differ in length");
    if (scores.empty()) throw MetricError("acc: no examples");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) hits += (scores[i] >= threshold) == labels[i];
    return static_cast<double>(hits) / static_cast<double>(scores.size());
}

}  // namespace llmkt::eval
