// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "eigen_maps.hpp"

namespace llmkt::numcore {

namespace {

TensorImpl& parent(TensorImpl& self, std::size_t k) { return *self.parents[k]; }

bool wants(TensorImpl& self, std::size_t k) { return self.parents[k]->requires_grad; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.dim() > 2) throw ContractError(std::string(op) + ": expected rank <= 2, got " + shape_str(t.shape()));
}

template <class F, class D>
Tensor unary(const Tensor& x, F f, D df) {
    Buffer out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
    return make_result(x.shape(), std::move(out), {x}, [df](TensorImpl& self) {
        auto& xi = parent(self, 0);
        auto& g = xi.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xi.data[i], self.data[i]);
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ContractError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Buffer out(m * n);
    as_mat(out, m, n).noalias() = as_cmat(a.data(), m, k) * as_cmat(b.data(), k, n);
    return make_result({m, n}, std::move(out), {a, b}, [m, k, n](TensorImpl& self) {
        auto dc = as_cmat(self.grad, m, n);
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) as_mat(pa.ensure_grad(), m, k).noalias() += dc * as_cmat(pb.data, k, n).transpose();
        if (pb.requires_grad) as_mat(pb.ensure_grad(), k, n).noalias() += as_cmat(pa.data, m, k).transpose() * dc;
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_matrix(x, "linear");
    if (w.dim() != 2) throw ContractError("linear: weight must be rank 2, got " + shape_str(w.shape()));
    const std::size_t n = x.rows(), in = x.cols(), out_dim = w.rows();
    if (w.cols() != in) {
        throw ContractError("linear: input width " + std::to_string(in) + " does not match weight " +
                            shape_str(w.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && bias.numel() != out_dim) {
        throw ContractError("linear: bias length " + std::to_string(bias.numel()) + " != " + std::to_string(out_dim));
    }
    Buffer out(n * out_dim);
    auto y = as_mat(out, n, out_dim);
    y.noalias() = as_cmat(x.data(), n, in) * as_cmat(w.data(), out_dim, in).transpose();
    if (has_bias) y.rowwise() += as_crow(bias.data(), out_dim);
    Shape shape = x.dim() == 1 ? Shape{out_dim} : Shape{n, out_dim};
    std::vector<Tensor> parents{x, w};
    if (has_bias) parents.push_back(bias);
    return make_result(std::move(shape), std::move(out), std::move(parents),
                       [n, in, out_dim, has_bias](TensorImpl& self) {
                           auto dy = as_cmat(self.grad, n, out_dim);
                           auto& px = parent(self, 0);
                           auto& pw = parent(self, 1);
                           if (px.requires_grad)
                               as_mat(px.ensure_grad(), n, in).noalias() += dy * as_cmat(pw.data, out_dim, in);
                           if (pw.requires_grad)
                               as_mat(pw.ensure_grad(), out_dim, in).noalias() += dy.transpose() * as_cmat(px.data, n, in);
                           if (has_bias && wants(self, 2))
                               as_row(parent(self, 2).ensure_grad(), out_dim) += dy.colwise().sum();
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(self, k)) continue;
            auto& g = parent(self, k).ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        if (wants(self, 0)) {
            auto& g = parent(self, 0).ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) {
            auto& g = parent(self, 1).ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& pb = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            auto& g = pb.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
        }
    });
}

Tensor scale(const Tensor& a, Real s) {
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
    return make_result(a.shape(), std::move(out), {a}, [s](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1) throw ContractError("scale_by: factor must have one element, got " + shape_str(s.shape()));
    const Real f = s.data()[0];
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * f;
    return make_result(a.shape(), std::move(out), {a, s}, [](TensorImpl& self) {
        auto& pa = parent(self, 0);
        auto& ps = parent(self, 1);
        if (pa.requires_grad) {
            auto& g = pa.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ps.data[0];
        }
        if (ps.requires_grad) {
            Real acc = 0.0;
            for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.data[i];
            ps.ensure_grad()[0] += acc;
        }
    });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    require_matrix(x, "add_bias");
    const std::size_t n = x.rows(), d = x.cols();
    if (bias.numel() != d) {
        throw ContractError("add_bias: bias length " + std::to_string(bias.numel()) + " != width " + std::to_string(d));
    }
    Buffer out(x.data().begin(), x.data().end());
    as_mat(out, n, d).rowwise() += as_crow(bias.data(), d);
    return make_result(x.shape(), std::move(out), {x, bias}, [n, d](TensorImpl& self) {
        if (wants(self, 0)) {
            auto& g = parent(self, 0).ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (wants(self, 1)) as_row(parent(self, 1).ensure_grad(), d) += as_cmat(self.grad, n, d).colwise().sum();
    });
}

Tensor gelu(const Tensor& x) {
    constexpr Real inv_sqrt2 = 0.70710678118654752440;
    constexpr Real inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        x, [](Real v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](Real v, Real) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v); });
}

Tensor tanh(const Tensor& x) {
    return unary(x, [](Real v) { return std::tanh(v); }, [](Real, Real y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](Real v) {
            if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
            const Real e = std::exp(v);
            return e / (1.0 + e);
        },
        [](Real, Real y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
    return unary(
        x, [](Real v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](Real v, Real) { return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Real eps) {
    require_matrix(x, "layer_norm");
    const std::size_t n = x.rows(), d = x.cols();
    if (gamma.numel() != d || beta.numel() != d) throw ContractError("layer_norm: affine parameters must have width d");
    Buffer out(n * d);
    Buffer xhat(n * d);
    Buffer inv_std(n);
    const auto in = x.data();
    const auto gm = gamma.data();
    const auto bt = beta.data();
    for (std::size_t r = 0; r < n; ++r) {
        const Real* row = in.data() + r * d;
        Real mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<Real>(d);
        Real var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<Real>(d);
        const Real is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const Real h = (row[c] - mu) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gm[c] + bt[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [n, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](TensorImpl& self) {
                           auto& px = parent(self, 0);
                           auto& pg = parent(self, 1);
                           auto& pb = parent(self, 2);
                           const auto& gy = self.grad;
                           if (pg.requires_grad) {
                               auto& gg = pg.ensure_grad();
                               for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t c = 0; c < d; ++c) gg[c] += gy[r * d + c] * xhat[r * d + c];
                           }
                           if (pb.requires_grad) {
                               auto& gb = pb.ensure_grad();
                               for (std::size_t r = 0; r < n; ++r)
                                   for (std::size_t c = 0; c < d; ++c) gb[c] += gy[r * d + c];
                           }
                           if (!px.requires_grad) return;
                           auto& gx = px.ensure_grad();
                           const Real inv_d = 1.0 / static_cast<Real>(d);
                           for (std::size_t r = 0; r < n; ++r) {
                               Real sum_g = 0.0, sum_gx = 0.0;
                               for (std::size_t c = 0; c < d; ++c) {
                                   const Real g = gy[r * d + c] * pg.data[c];
                                   sum_g += g;
                                   sum_gx += g * xhat[r * d + c];
                               }
                               for (std::size_t c = 0; c < d; ++c) {
                                   const Real g = gy[r * d + c] * pg.data[c];
                                   gx[r * d + c] += inv_std[r] * (g - inv_d * sum_g - xhat[r * d + c] * inv_d * sum_gx);
                               }
                           }
                       });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
    if (table.dim() != 2) throw ContractError("embedding: table must be rank 2");
    const std::size_t vocab = table.rows();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw ContractError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) +
                                " rows");
        }
    }
    Tensor out = gather_rows(table, ids);
    return out;
}

Tensor gather_rows(const Tensor& x, std::span<const int> rows) {
    require_matrix(x, "gather_rows");
    const std::size_t n = x.rows(), d = x.cols();
    Buffer out(rows.size() * d);
    const auto in = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto r = static_cast<std::size_t>(rows[i]);
        if (rows[i] < 0 || r >= n) throw ContractError("gather_rows: row index out of range");
        std::copy_n(in.data() + r * d, d, out.data() + i * d);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return make_result({rows.size(), d}, std::move(out), {x}, [idx = std::move(idx), d](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Real* dst = g.data() + static_cast<std::size_t>(idx[i]) * d;
            const Real* src = self.grad.data() + i * d;
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    });
}

Tensor replace_rows(const Tensor& x, std::span<const int> positions, const Tensor& rows) {
    require_matrix(x, "replace_rows");
    const std::size_t n = x.rows(), d = x.cols();
    if (rows.numel() != positions.size() * d) {
        throw ContractError("replace_rows: " + std::to_string(positions.size()) + " positions but replacement shape " +
                            shape_str(rows.shape()));
    }
    Buffer out(x.data().begin(), x.data().end());
    std::vector<std::uint8_t> replaced(n, 0);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        const auto p = static_cast<std::size_t>(positions[i]);
        if (positions[i] < 0 || p >= n) {
            throw ContractError("replace_rows: position " + std::to_string(positions[i]) + " outside " +
                                std::to_string(n) + " rows");
        }
        if (replaced[p]) throw ContractError("replace_rows: position " + std::to_string(p) + " replaced twice");
        replaced[p] = 1;
        std::copy_n(rows.data().data() + i * d, d, out.data() + p * d);
    }
    std::vector<int> pos(positions.begin(), positions.end());
    return make_result(x.shape(), std::move(out), {x, rows},
                       [pos = std::move(pos), replaced = std::move(replaced), d](TensorImpl& self) {
                           if (wants(self, 0)) {
                               auto& g = parent(self, 0).ensure_grad();
                               for (std::size_t r = 0; r < replaced.size(); ++r) {
                                   if (replaced[r]) continue;
                                   for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[r * d + c];
                               }
                           }
                           if (wants(self, 1)) {
                               auto& g = parent(self, 1).ensure_grad();
                               for (std::size_t i = 0; i < pos.size(); ++i) {
                                   const auto p = static_cast<std::size_t>(pos[i]);
                                   for (std::size_t c = 0; c < d; ++c) g[i * d + c] += self.grad[p * d + c];
                               }
                           }
                       });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_matrix(a, "concat_cols");
    require_matrix(b, "concat_cols");
    const std::size_t n = a.rows();
    if (b.rows() != n) throw ContractError("concat_cols: row counts differ");
    const std::size_t da = a.cols(), db = b.cols();
    Buffer out(n * (da + db));
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(a.data().data() + r * da, da, out.data() + r * (da + db));
        std::copy_n(b.data().data() + r * db, db, out.data() + r * (da + db) + da);
    }
    Shape shape = (a.dim() == 1 && b.dim() == 1) ? Shape{da + db} : Shape{n, da + db};
    return make_result(std::move(shape), std::move(out), {a, b}, [n, da, db](TensorImpl& self) {
        const std::size_t w = da + db;
        if (wants(self, 0)) {
            auto& g = parent(self, 0).ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < da; ++c) g[r * da + c] += self.grad[r * w + c];
        }
        if (wants(self, 1)) {
            auto& g = parent(self, 1).ensure_grad();
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < db; ++c) g[r * db + c] += self.grad[r * w + da + c];
        }
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix(x, "slice_cols");
    const std::size_t n = x.rows(), d = x.cols();
    if (begin > end || end > d) throw ContractError("slice_cols: bad column range");
    const std::size_t w = end - begin;
    Buffer out(n * w);
    for (std::size_t r = 0; r < n; ++r) std::copy_n(x.data().data() + r * d + begin, w, out.data() + r * w);
    Shape shape = x.dim() == 1 ? Shape{w} : Shape{n, w};
    return make_result(std::move(shape), std::move(out), {x}, [n, d, w, begin](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < w; ++c) g[r * d + begin + c] += self.grad[r * w + c];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_rows: no inputs");
    const std::size_t d = parts.front().cols();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_matrix(p, "concat_rows");
        if (p.cols() != d) throw ContractError("concat_rows: widths differ");
        n += p.rows();
    }
    Buffer out;
    out.reserve(n * d);
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(out.size());
        out.insert(out.end(), p.data().begin(), p.data().end());
    }
    return make_result({n, d}, std::move(out), parts, [offsets = std::move(offsets)](TensorImpl& self) {
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            if (!wants(self, k)) continue;
            auto& g = parent(self, k).ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ContractError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    Buffer out(x.data().begin(), x.data().end());
    return make_result(std::move(shape), std::move(out), {x}, [](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor mean_rows(const Tensor& x) {
    require_matrix(x, "mean_rows");
    const std::size_t n = x.rows(), d = x.cols();
    if (n == 0) throw ContractError("mean_rows: no rows");
    Buffer out(d, 0.0);
    as_row(out, d) = as_cmat(x.data(), n, d).colwise().sum() / static_cast<Real>(n);
    return make_result({d}, std::move(out), {x}, [n, d](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        const Real inv = 1.0 / static_cast<Real>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) g[r * d + c] += self.grad[c] * inv;
    });
}

Tensor sum(const Tensor& x) {
    Real acc = 0.0;
    for (Real v : x.data()) acc += v;
    return make_result({}, {acc}, {x}, [](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<Real>(x.numel()));
}

Tensor pick(const Tensor& x, std::span<const int> cols) {
    require_matrix(x, "pick");
    const std::size_t n = x.rows(), m = x.cols();
    if (cols.size() != n) throw ContractError("pick: need one column per row");
    Buffer out(n);
    for (std::size_t r = 0; r < n; ++r) {
        if (cols[r] < 0 || static_cast<std::size_t>(cols[r]) >= m) throw ContractError("pick: column out of range");
        out[r] = x.data()[r * m + static_cast<std::size_t>(cols[r])];
    }
    std::vector<int> idx(cols.begin(), cols.end());
    return make_result({n}, std::move(out), {x}, [idx = std::move(idx), m](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) g[r * m + static_cast<std::size_t>(idx[r])] += self.grad[r];
    });
}

Tensor masked_softmax_rows(const Tensor& x, std::span<const std::uint8_t> keep) {
    require_matrix(x, "masked_softmax_rows");
    const std::size_t n = x.rows(), m = x.cols();
    if (keep.size() != n * m) throw ContractError("masked_softmax_rows: mask size mismatch");
    Buffer out(n * m, 0.0);
    const auto in = x.data();
    for (std::size_t r = 0; r < n; ++r) {
        Real mx = -std::numeric_limits<Real>::infinity();
        for (std::size_t c = 0; c < m; ++c)
            if (keep[r * m + c]) mx = std::max(mx, in[r * m + c]);
        if (!std::isfinite(mx)) continue;
        Real z = 0.0;
        for (std::size_t c = 0; c < m; ++c) {
            if (!keep[r * m + c]) continue;
            out[r * m + c] = std::exp(in[r * m + c] - mx);
            z += out[r * m + c];
        }
        for (std::size_t c = 0; c < m; ++c) out[r * m + c] /= z;
    }
    return make_result(x.shape(), std::move(out), {x}, [n, m](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t r = 0; r < n; ++r) {
            Real dot = 0.0;
            for (std::size_t c = 0; c < m; ++c) dot += self.grad[r * m + c] * self.data[r * m + c];
            for (std::size_t c = 0; c < m; ++c)
                g[r * m + c] += self.data[r * m + c] * (self.grad[r * m + c] - dot);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    require_matrix(logits, "cross_entropy");
    const std::size_t n = logits.rows(), v = logits.cols();
    if (targets.size() != n || n == 0) throw ContractError("cross_entropy: need one target per row");
    Buffer probs(n * v);
    Real loss = 0.0;
    const auto in = logits.data();
    for (std::size_t r = 0; r < n; ++r) {
        if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
            throw ContractError("cross_entropy: target out of range");
        }
        const Real* row = in.data() + r * v;
        const Real mx = *std::max_element(row, row + v);
        Real z = 0.0;
        for (std::size_t c = 0; c < v; ++c) z += std::exp(row[c] - mx);
        const Real lse = mx + std::log(z);
        for (std::size_t c = 0; c < v; ++c) probs[r * v + c] = std::exp(row[c] - lse);
        loss += lse - row[static_cast<std::size_t>(targets[r])];
    }
    loss /= static_cast<Real>(n);
    std::vector<int> tgt(targets.begin(), targets.end());
    return make_result({}, {loss}, {logits}, [probs = std::move(probs), tgt = std::move(tgt), n, v](TensorImpl& self) {
        auto& g = parent(self, 0).ensure_grad();
        const Real s = self.grad[0] / static_cast<Real>(n);
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < v; ++c) g[r * v + c] += s * probs[r * v + c];
            g[r * v + static_cast<std::size_t>(tgt[r])] -= s;
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const Real> labels, std::span<const Real> weights) {
    const std::size_t n = logits.numel();
    if (labels.size() != n) throw ContractError("bce_with_logits: label count mismatch");
    if (!weights.empty() && weights.size() != n) throw ContractError("bce_with_logits: weight count mismatch");
    Real total_w = 0.0, loss = 0.0;
    const auto z = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        const Real w = weights.empty() ? 1.0 : weights[i];
        if (w == 0.0) continue;
        // log(1+exp(z)) - y z, stable
        const Real sp = z[i] > 0 ? z[i] + std::log1p(std::exp(-z[i])) : std::log1p(std::exp(z[i]));
        loss += w * (sp - labels[i] * z[i]);
        total_w += w;
    }
    if (total_w <= 0.0) throw ContractError("bce_with_logits: no weighted entries");
    loss /= total_w;
    Buffer y(labels.begin(), labels.end());
    Buffer wv(weights.begin(), weights.end());
    return make_result({}, {loss}, {logits},
                       [y = std::move(y), wv = std::move(wv), total_w](TensorImpl& self) {
                           auto& px = parent(self, 0);
                           auto& g = px.ensure_grad();
                           const Real s = self.grad[0] / total_w;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const Real w = wv.empty() ? 1.0 : wv[i];
                               if (w == 0.0) continue;
                               const Real zi = px.data[i];
                               const Real p = zi >= 0 ? 1.0 / (1.0 + std::exp(-zi)) : std::exp(zi) / (1.0 + std::exp(zi));
                               g[i] += s * w * (p - y[i]);
                           }
                       });
}

Tensor dropout(const Tensor& x, Real p, std::mt19937_64& rng) {
    if (p < 0.0 || p >= 1.0) throw ContractError("dropout: rate must be in [0,1)");
    if (p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    Buffer mask(x.numel());
    const Real inv = 1.0 / (1.0 - p);
    for (auto& m : mask) m = keep(rng) ? inv : 0.0;
    return mul(x, Tensor::from_buffer(x.shape(), std::move(mask)));
}

Tensor sinusoidal_encoding(std::span<const int> positions, std::size_t d) {
    Buffer out(positions.size() * d);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const Real freq = std::pow(10000.0, -static_cast<Real>(c - c % 2) / static_cast<Real>(d));
            const Real angle = static_cast<Real>(positions[r]) * freq;
            out[r * d + c] = c % 2 == 0 ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from_buffer({positions.size(), d}, std::move(out));
}

Tensor averaging_matrix(const std::vector<std::vector<int>>& groups, std::size_t n) {
    Buffer out(groups.size() * n, 0.0);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw ContractError("averaging_matrix: empty group");
        const Real w = 1.0 / static_cast<Real>(groups[g].size());
        for (int r : groups[g]) {
            if (r < 0 || static_cast<std::size_t>(r) >= n) throw ContractError("averaging_matrix: row out of range");
            out[g * n + static_cast<std::size_t>(r)] += w;
        }
    }
    return Tensor::from_buffer({groups.size(), n}, std::move(out));
}

}  // namespace llmkt::numcore
