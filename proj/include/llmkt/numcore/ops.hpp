// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "llmkt/numcore/tensor.hpp"

namespace llmkt::numcore {

// Matrix products. Rank-1 inputs are treated as one row.
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
/// x·wᵀ (+ bias). x is [n,in], w is [out,in], bias is [out] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real s);
/// a * s where s is a one-element tensor that may carry a gradient.
Tensor scale_by(const Tensor& a, const Tensor& s);
/// Adds a [d] vector to every row of an [n,d] matrix.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);  // exact erf form
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);

/// Row-wise layer normalisation with affine [d] parameters.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps = 1e-5);

/// Row lookup: result row i is table row ids[i].
Tensor embedding(const Tensor& table, std::span<const int> ids);
Tensor gather_rows(const Tensor& x, std::span<const int> rows);
/// Copy of x whose rows `positions[i]` are overwritten by rows(i).
Tensor replace_rows(const Tensor& x, std::span<const int> positions, const Tensor& rows);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);

Tensor mean_rows(const Tensor& x);  // [n,d] -> [d]
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// out[i] = x[i, cols[i]].
Tensor pick(const Tensor& x, std::span<const int> cols);

/// Row softmax over entries with keep[i] != 0; fully masked rows give zeros.
Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> keep);

/// Mean cross-entropy of rows of `logits` against class indices.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
/// Mean binary cross-entropy with logits over entries where weight != 0.
Tensor bce_with_logits(const Tensor& logits, std::span<const Real> labels, std::span<const Real> weights = {});

/// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, Real p, std::mt19937_64& rng);

/// Constant [n, d] sinusoidal encoding of the given positions:
/// sin(p / 10000^(2i/d)) in column 2i and the matching cos in column 2i+1.
Tensor sinusoidal_encoding(std::span<const int> positions, std::size_t d);

/// Constant [groups.size(), n] matrix whose row g averages the rows listed in
/// groups[g]; matmul with it pools variable-length segments.
Tensor averaging_matrix(const std::vector<std::vector<int>>& groups, std::size_t n);

}  // namespace llmkt::numcore
