// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

struct KeyRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// A run of consecutive query rows sharing one visibility pattern.
///
/// Every query in [query_begin, query_end) sees all keys in `visible`. When
/// `causal` is set, query row query_begin + r additionally sees keys
/// [causal_begin, causal_begin + r]. Queries index Q rows; keys index K/V rows.
struct AttentionBlock {
    std::size_t query_begin = 0;
    std::size_t query_end = 0;
    std::vector<KeyRange> visible;
    bool causal = false;
    std::size_t causal_begin = 0;
};

/// Causal self-attention layout over n rows, split into query blocks.
std::vector<AttentionBlock> causal_layout(std::size_t n, std::size_t block = 64);
/// Bidirectional layout over rows [begin, end).
AttentionBlock full_block(std::size_t begin, std::size_t end);

/// Linear distance penalty added to the scores of head h:
/// -slopes[h] * (query_pos[i] - key_pos[j]).
struct PositionBias {
    std::span<const int> query_pos;
    std::span<const int> key_pos;
    std::span<const Real> slopes;
};

/// Geometric slopes 2^(-8(h+1)/n_heads).
std::vector<Real> alibi_slopes(std::size_t n_heads);

/// Scaled dot-product attention with heads laid out as contiguous column
/// groups of width d / n_heads. Returns [rows(q), d]; rows of q not covered by
/// the layout are zero.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> layout, const PositionBias* bias = nullptr);

}  // namespace llmkt::numcore
