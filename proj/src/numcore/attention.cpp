// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "eigen_maps.hpp"

namespace llmkt::numcore {

namespace {

std::vector<std::size_t> block_keys(const AttentionBlock& b) {
    std::vector<std::size_t> keys;
    for (const auto& r : b.visible)
        for (std::size_t j = r.begin; j < r.end; ++j) keys.push_back(j);
    if (b.causal)
        for (std::size_t j = 0; j < b.query_end - b.query_begin; ++j) keys.push_back(b.causal_begin + j);
    return keys;
}

std::size_t visible_count(const AttentionBlock& b) {
    std::size_t n = 0;
    for (const auto& r : b.visible) n += r.end - r.begin;
    return n;
}

void gather(const Buffer& src, std::size_t d, std::size_t col, std::size_t dh,
            const std::vector<std::size_t>& rows, RowMat& out) {
    out.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dh));
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(src.data() + rows[i] * d + col, dh, out.data() + i * dh);
}

void scatter_add(Buffer& dst, std::size_t d, std::size_t col, std::size_t dh,
                 const std::vector<std::size_t>& rows, const RowMat& in) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Real* p = dst.data() + rows[i] * d + col;
        const Real* s = in.data() + i * dh;
        for (std::size_t c = 0; c < dh; ++c) p[c] += s[c];
    }
}

ConstStridedMap head_view(const Buffer& buf, std::size_t d, std::size_t row, std::size_t nrows,
                          std::size_t col, std::size_t dh) {
    return ConstStridedMap(buf.data() + row * d + col, static_cast<Eigen::Index>(nrows),
                           static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
}

StridedMap head_view_mut(Buffer& buf, std::size_t d, std::size_t row, std::size_t nrows, std::size_t col,
                         std::size_t dh) {
    return StridedMap(buf.data() + row * d + col, static_cast<Eigen::Index>(nrows), static_cast<Eigen::Index>(dh),
                      Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
}

}  // namespace

std::vector<AttentionBlock> causal_layout(std::size_t n, std::size_t block) {
    std::vector<AttentionBlock> layout;
    for (std::size_t start = 0; start < n; start += block) {
        AttentionBlock b;
        b.query_begin = start;
        b.query_end = std::min(n, start + block);
        if (start > 0) b.visible.push_back({0, start});
        b.causal = true;
        b.causal_begin = start;
        layout.push_back(std::move(b));
    }
    return layout;
}

AttentionBlock full_block(std::size_t begin, std::size_t end) {
    AttentionBlock b;
    b.query_begin = begin;
    b.query_end = end;
    b.visible.push_back({begin, end});
    return b;
}

std::vector<Real> alibi_slopes(std::size_t n_heads) {
    std::vector<Real> out;
    for (std::size_t h = 0; h < n_heads; ++h)
        out.push_back(std::pow(2.0, -8.0 * static_cast<Real>(h + 1) / static_cast<Real>(n_heads)));
    return out;
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads,
                            std::span<const AttentionBlock> layout, const PositionBias* bias) {
    if (q.dim() != 2 || k.dim() != 2 || v.dim() != 2) throw ContractError("attention: q, k, v must be rank 2");
    const std::size_t d = q.cols();
    if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) throw ContractError("attention: q/k/v widths differ");
    if (n_heads == 0 || d % n_heads != 0) throw ContractError("attention: width not divisible by head count");
    const std::size_t tq = q.rows(), tk = k.rows(), dh = d / n_heads;
    const Real sc = 1.0 / std::sqrt(static_cast<Real>(dh));

    if (bias && (bias->query_pos.size() != tq || bias->key_pos.size() != tk || bias->slopes.size() != n_heads))
        throw ContractError("attention: position bias does not match q, k or the head count");
    std::vector<std::vector<std::size_t>> keys(layout.size());
    for (std::size_t bi = 0; bi < layout.size(); ++bi) {
        const auto& b = layout[bi];
        if (b.query_begin > b.query_end || b.query_end > tq) throw ContractError("attention: query block out of range");
        keys[bi] = block_keys(b);
        for (std::size_t j : keys[bi])
            if (j >= tk) throw ContractError("attention: key index out of range");
    }

    Buffer out(tq * d, 0.0);
    // Softmax weights, saved per (block, head) for the backward pass.
    std::vector<RowMat> probs(layout.size() * n_heads);
    const Buffer& qd = q.impl().data;
    const Buffer& kd = k.impl().data;
    const Buffer& vd = v.impl().data;
    RowMat kb, vb;
    Eigen::Array<Real, Eigen::Dynamic, 1> kpos;
    for (std::size_t bi = 0; bi < layout.size(); ++bi) {
        const auto& b = layout[bi];
        const std::size_t nq = b.query_end - b.query_begin, nk = keys[bi].size();
        if (nq == 0) continue;
        const std::size_t n_vis = visible_count(b);
        if (bias) {
            kpos.resize(static_cast<Eigen::Index>(nk));
            for (std::size_t c = 0; c < nk; ++c) kpos[static_cast<Eigen::Index>(c)] = bias->key_pos[keys[bi][c]];
        }
        for (std::size_t h = 0; h < n_heads; ++h) {
            const std::size_t col = h * dh;
            gather(kd, d, col, dh, keys[bi], kb);
            gather(vd, d, col, dh, keys[bi], vb);
            RowMat& p = probs[bi * n_heads + h];
            p.noalias() = head_view(qd, d, b.query_begin, nq, col, dh) * kb.transpose();
            const Real slope = bias ? bias->slopes[h] : 0.0;
            for (std::size_t r = 0; r < nq; ++r) {
                const Eigen::Index limit =
                    static_cast<Eigen::Index>(b.causal ? n_vis + r + 1 : nk);
                Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>> row(p.data() + r * nk, static_cast<Eigen::Index>(nk));
                auto live = row.head(limit);
                if (bias)
                    live = live * sc + slope * (kpos.head(limit) - bias->query_pos[b.query_begin + r]);
                else
                    live *= sc;
                live = (live - live.maxCoeff()).exp();
                live /= live.sum();
                row.tail(static_cast<Eigen::Index>(nk) - limit).setZero();
            }
            head_view_mut(out, d, b.query_begin, nq, col, dh).noalias() = p * vb;
        }
    }

    std::vector<AttentionBlock> blocks(layout.begin(), layout.end());
    return make_result(
        {tq, d}, std::move(out), {q, k, v},
        [blocks = std::move(blocks), keys = std::move(keys), probs = std::move(probs), n_heads, d, dh, sc](
            TensorImpl& self) {
            auto& pq = *self.parents[0];
            auto& pk = *self.parents[1];
            auto& pv = *self.parents[2];
            if (pq.requires_grad) pq.ensure_grad();
            if (pk.requires_grad) pk.ensure_grad();
            if (pv.requires_grad) pv.ensure_grad();
            RowMat kb, vb, dp, tmp;
            for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
                const auto& b = blocks[bi];
                const std::size_t nq = b.query_end - b.query_begin;
                if (nq == 0) continue;
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t col = h * dh;
                    const RowMat& p = probs[bi * n_heads + h];
                    auto dout = head_view(self.grad, d, b.query_begin, nq, col, dh);
                    if (pv.requires_grad) {
                        tmp.noalias() = p.transpose() * dout;
                        scatter_add(pv.grad, d, col, dh, keys[bi], tmp);
                    }
                    if (!pq.requires_grad && !pk.requires_grad) continue;
                    gather(pv.data, d, col, dh, keys[bi], vb);
                    dp.noalias() = dout * vb.transpose();
                    // dS = P * (dP - rowsum(dP * P)), folded with the score scale.
                    for (Eigen::Index r = 0; r < dp.rows(); ++r) {
                        const Real dot = dp.row(r).dot(p.row(r));
                        dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot) * sc).matrix();
                    }
                    gather(pk.data, d, col, dh, keys[bi], kb);
                    if (pq.requires_grad) head_view_mut(pq.grad, d, b.query_begin, nq, col, dh).noalias() += dp * kb;
                    if (pk.requires_grad) {
                        tmp.noalias() = dp.transpose() * head_view(pq.data, d, b.query_begin, nq, col, dh);
                        scatter_add(pk.grad, d, col, dh, keys[bi], tmp);
                    }
                }
            }
        });
}

}  // namespace llmkt::numcore
