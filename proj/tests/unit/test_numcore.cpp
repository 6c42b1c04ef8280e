// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "llmkt/numcore/attention.hpp"
#include "llmkt/numcore/checkpoint.hpp"
#include "llmkt/numcore/gradcheck.hpp"
#include "llmkt/numcore/ops.hpp"
#include "llmkt/numcore/optim.hpp"

namespace nc = llmkt::numcore;
using nc::Real;
using nc::Tensor;

namespace {

Tensor rand_tensor(nc::Shape s, std::mt19937_64& rng, Real sd = 1.0, bool grad = true) {
    return nc::randn(std::move(s), sd, rng, grad);
}

// Reference attention built from primitive ops over a dense keep-mask.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                       const std::vector<std::uint8_t>& keep) {
    const std::size_t d = q.cols(), dh = d / heads;
    std::vector<Tensor> outs;
    Tensor acc;
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = nc::slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = nc::slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = nc::slice_cols(v, h * dh, (h + 1) * dh);
        auto s = nc::scale(nc::linear(qh, kh), 1.0 / std::sqrt(static_cast<Real>(dh)));
        auto p = nc::masked_softmax_rows(s, keep);
        auto o = nc::matmul(p, vh);
        acc = acc ? nc::concat_cols(acc, o) : o;
    }
    return acc;
}

}  // namespace

TEST_CASE("backward of sum of squares") {
    auto w = Tensor::from({2}, {1.0, 2.0}, true);
    nc::backward(nc::sum(nc::mul(w, w)));
    CHECK(w.grad() == std::vector<Real>{2.0, 4.0});
}

TEST_CASE("constant loss leaves parameters without gradient") {
    auto w = Tensor::from({2}, {1.0, 2.0}, true);
    auto c = Tensor::scalar(3.0);
    nc::backward(c);
    CHECK_FALSE(w.has_grad());
    CHECK(w.grad() == std::vector<Real>{0.0, 0.0});
}

TEST_CASE("backward rejects non-scalar loss") {
    auto w = Tensor::from({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(nc::backward(nc::mul(w, w)), nc::ContractError);
}

TEST_CASE("random three-layer composition matches central differences") {
    std::mt19937_64 rng(7);
    auto x = rand_tensor({5, 4}, rng, 1.0, false);
    auto w1 = rand_tensor({6, 4}, rng, 0.5);
    auto b1 = rand_tensor({6}, rng, 0.1);
    auto w2 = rand_tensor({6, 6}, rng, 0.5);
    auto w3 = rand_tensor({3, 6}, rng, 0.5);
    auto b3 = rand_tensor({3}, rng, 0.1);
    auto fn = [&] {
        auto h1 = nc::tanh(nc::linear(x, w1, b1));
        auto h2 = nc::gelu(nc::linear(h1, w2));
        auto h3 = nc::linear(h2, w3, b3);
        return nc::sum(nc::mul(h3, h3));
    };
    auto r = nc::grad_check(fn, {w1, b1, w2, w3, b3}, 1e-6);
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("backward is linear in the loss") {
    std::mt19937_64 rng(11);
    auto w = rand_tensor({3, 3}, rng);
    auto x = rand_tensor({2, 3}, rng, 1.0, false);
    auto f = [&] { return nc::sum(nc::sigmoid(nc::linear(x, w))); };
    auto g = [&] { return nc::sum(nc::mul(w, w)); };
    const Real a = 0.7, b = -1.3;
    nc::backward(f());
    auto gf = w.grad();
    w.zero_grad();
    nc::backward(g());
    auto gg = w.grad();
    w.zero_grad();
    nc::backward(nc::add(nc::scale(f(), a), nc::scale(g(), b)));
    auto gc = w.grad();
    for (std::size_t i = 0; i < gc.size(); ++i) CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
}

TEST_CASE("adam step matches the bias-corrected closed form") {
    auto p = Tensor::from({1}, {0.0}, true);
    std::vector<Tensor> params{p};
    auto st = nc::OptimState::for_params(params, {0.9, 0.999, 1e-8, 0.0});
    nc::adam_step(st, params, {{1.0}}, 0.1);
    // m̂ = 1, v̂ = 1 after one step.
    CHECK(p.at(0) == doctest::Approx(-0.1 * (1.0 / (1.0 + 1e-8))).epsilon(1e-15));
    CHECK(st.step == 1);
}

TEST_CASE("adam with zero gradient and no decay is a no-op") {
    auto p = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
    std::vector<Tensor> params{p};
    auto st = nc::OptimState::for_params(params, {0.9, 0.999, 1e-8, 0.0});
    st.first_moment[0] = {0.0, 0.0, 0.0};
    nc::adam_step(st, params, {{0.0, 0.0, 0.0}}, 0.01);
    CHECK(p.data()[0] == 0.5);
    CHECK(p.data()[1] == -1.0);
    CHECK(p.data()[2] == 2.0);

    // Existing moments only decay.
    st.first_moment[0] = {1.0, 1.0, 1.0};
    st.second_moment[0] = {1.0, 1.0, 1.0};
    auto q = Tensor::from({3}, {0.0, 0.0, 0.0}, true);
    std::vector<Tensor> qp{q};
    st.step = 0;
    nc::adam_step(st, qp, {{0.0, 0.0, 0.0}}, 0.01);
    CHECK(st.first_moment[0][0] == doctest::Approx(0.9));
    CHECK(st.second_moment[0][0] == doctest::Approx(0.999));
}

TEST_CASE("decoupled weight decay alone") {
    auto p = Tensor::from({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    auto st = nc::OptimState::for_params(params, {0.9, 0.999, 1e-8, 1e-5});
    nc::adam_step(st, params, {{0.0}}, 3e-4);
    CHECK(p.at(0) == doctest::Approx(1.0 - 3e-9).epsilon(1e-15));
}

TEST_CASE("adam rejects mismatched gradients") {
    auto p = Tensor::from({2}, {1.0, 2.0}, true);
    std::vector<Tensor> params{p};
    auto st = nc::OptimState::for_params(params);
    CHECK_THROWS_AS(nc::adam_step(st, params, {{1.0}}, 0.1), nc::ContractError);
    CHECK_THROWS_AS(nc::adam_step(st, params, {{1.0, 1.0}}, 0.0), nc::ContractError);
}

TEST_CASE("cosine schedule") {
    CHECK(nc::cosine_lr(0, 100, 3e-4) == doctest::Approx(3e-4).epsilon(1e-15));
    CHECK(std::abs(nc::cosine_lr(100, 100, 3e-4)) < 1e-20);
    CHECK(nc::cosine_lr(50, 100, 3e-4) == doctest::Approx(1.5e-4).epsilon(1e-12));
    CHECK_THROWS_AS(nc::cosine_lr(101, 100, 3e-4), nc::ContractError);
    CHECK_THROWS_AS(nc::cosine_lr(-1, 100, 3e-4), nc::ContractError);
    CHECK_THROWS_AS(nc::cosine_lr(0, 0, 3e-4), nc::ContractError);
    Real prev = nc::cosine_lr(0, 37, 1.0);
    for (int s = 1; s <= 37; ++s) {
        const Real cur = nc::cosine_lr(s, 37, 1.0);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("grad_check on a quadratic form") {
    std::mt19937_64 rng(3);
    auto a = rand_tensor({4, 4}, rng, 1.0, false);
    auto x = rand_tensor({4, 1}, rng);
    auto fn = [&] {
        auto xt = nc::reshape(x, {1, 4});
        return nc::sum(nc::matmul(nc::matmul(xt, a), x));
    };
    CHECK(nc::grad_check(fn, {x}, 1e-6).max_rel_error < 1e-8);
}

TEST_CASE("grad_check on softmax cross-entropy head") {
    std::mt19937_64 rng(5);
    auto x = rand_tensor({6, 5}, rng, 1.0, false);
    auto w = rand_tensor({7, 5}, rng, 0.5);
    auto b = rand_tensor({7}, rng, 0.1);
    std::vector<int> tgt{0, 3, 6, 2, 2, 5};
    auto fn = [&] { return nc::cross_entropy(nc::linear(x, w, b), tgt); };
    CHECK(nc::grad_check(fn, {w, b}, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("grad_check of the identity is exact") {
    auto x = Tensor::from({1}, {0.5}, true);
    auto fn = [&] { return nc::sum(x); };
    CHECK(nc::grad_check(fn, {x}, std::ldexp(1.0, -20)).max_rel_error == 0.0);
}

TEST_CASE("grad_check rejects non-finite values") {
    auto x = Tensor::from({1}, {-1.0}, true);
    auto fn = [&] { return nc::sum(nc::scale(x, std::numeric_limits<Real>::infinity())); };
    CHECK_THROWS(nc::grad_check(fn, {x}, 1e-6));
}

TEST_CASE("every primitive passes a gradient check") {
    std::mt19937_64 rng(19);
    auto x = rand_tensor({4, 6}, rng);
    auto y = rand_tensor({4, 6}, rng);
    auto g = rand_tensor({6}, rng, 0.3);
    auto bb = rand_tensor({6}, rng, 0.3);
    auto s = Tensor::from({1}, {0.8}, true);
    auto rows = rand_tensor({2, 6}, rng);
    std::vector<int> ids{3, 0, 3, 1};
    std::vector<int> pos{1, 3};
    std::vector<int> cols{0, 5, 2, 2};
    std::vector<std::uint8_t> keep(24, 1);
    keep[3] = keep[7] = keep[12] = 0;
    for (int c = 0; c < 6; ++c) keep[18 + c] = 0;  // fully masked row
    std::vector<Real> labels{1, 0, 1, 1};
    std::vector<Real> weights{1, 0.5, 0, 2};

    auto check = [&](const char* name, std::function<Tensor()> fn, std::vector<Tensor> ps) {
        INFO(name);
        CHECK(nc::grad_check(fn, std::move(ps), 1e-6).max_rel_error < 1e-6);
    };
    check("layer_norm", [&] { return nc::sum(nc::mul(nc::layer_norm(x, g, bb), y)); }, {x, g, bb});
    check("gelu", [&] { return nc::sum(nc::mul(nc::gelu(x), y)); }, {x});
    check("softplus", [&] { return nc::sum(nc::mul(nc::softplus(x), y)); }, {x});
    check("scale_by", [&] { return nc::sum(nc::mul(nc::scale_by(x, s), y)); }, {x, s});
    check("add_bias", [&] { return nc::sum(nc::mul(nc::add_bias(x, g), y)); }, {x, g});
    check("embedding", [&] { return nc::sum(nc::mul(nc::embedding(x, ids), y)); }, {x});
    check("replace_rows", [&] { return nc::sum(nc::mul(nc::replace_rows(x, pos, rows), y)); }, {x, rows});
    check("concat/slice",
          [&] { return nc::sum(nc::mul(nc::slice_cols(nc::concat_cols(x, y), 3, 9), y)); }, {x, y});
    check("concat_rows", [&] { return nc::sum(nc::mul(nc::concat_rows({rows, x}), nc::concat_rows({rows, y}))); },
          {x, rows});
    check("mean_rows", [&] { return nc::sum(nc::mul(nc::mean_rows(x), g)); }, {x, g});
    check("pick", [&] { return nc::sum(nc::tanh(nc::pick(x, cols))); }, {x});
    check("masked_softmax", [&] { return nc::sum(nc::mul(nc::masked_softmax_rows(x, keep), y)); }, {x});
    check("bce", [&] { return nc::bce_with_logits(nc::pick(x, cols), labels, weights); }, {x});
    check("matmul", [&] { return nc::sum(nc::sigmoid(nc::matmul(x, nc::reshape(y, {6, 4})))); }, {x, y});
}

TEST_CASE("fused attention equals the dense reference") {
    std::mt19937_64 rng(23);
    const std::size_t t = 13, d = 8, heads = 2;
    auto q = rand_tensor({t, d}, rng);
    auto k = rand_tensor({t, d}, rng);
    auto v = rand_tensor({t, d}, rng);

    // Shared trunk [0,7) causal, two suffix segments branching at 4 and 7.
    std::vector<nc::AttentionBlock> layout = nc::causal_layout(7, 3);
    nc::AttentionBlock s1;
    s1.query_begin = 7;
    s1.query_end = 10;
    s1.visible = {{0, 4}};
    s1.causal = true;
    s1.causal_begin = 7;
    nc::AttentionBlock s2 = s1;
    s2.query_begin = 10;
    s2.query_end = 13;
    s2.visible = {{0, 7}};
    s2.causal_begin = 10;
    layout.push_back(s1);
    layout.push_back(s2);

    std::vector<std::uint8_t> keep(t * t, 0);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j <= i; ++j) keep[i * t + j] = 1;
    for (std::size_t i = 7; i < 10; ++i) {
        for (std::size_t j = 0; j < 4; ++j) keep[i * t + j] = 1;
        for (std::size_t j = 7; j <= i; ++j) keep[i * t + j] = 1;
    }
    for (std::size_t i = 10; i < 13; ++i) {
        for (std::size_t j = 0; j < 7; ++j) keep[i * t + j] = 1;
        for (std::size_t j = 10; j <= i; ++j) keep[i * t + j] = 1;
    }

    auto fused = nc::multi_head_attention(q, k, v, heads, layout);
    auto ref = naive_attention(q, k, v, heads, keep);
    for (std::size_t i = 0; i < fused.numel(); ++i) CHECK(fused.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));

    auto w = rand_tensor({t, d}, rng, 1.0, false);
    auto fn = [&] { return nc::sum(nc::mul(nc::multi_head_attention(q, k, v, heads, layout), w)); };
    CHECK(nc::grad_check(fn, {q, k, v}, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("attention rejects out-of-range layouts") {
    auto q = Tensor::zeros({2, 4});
    nc::AttentionBlock b;
    b.query_begin = 0;
    b.query_end = 2;
    b.visible = {{0, 3}};
    std::vector<nc::AttentionBlock> layout{b};
    CHECK_THROWS_AS(nc::multi_head_attention(q, q, q, 2, layout), nc::ContractError);
    CHECK_THROWS_AS(nc::multi_head_attention(q, q, q, 3, nc::causal_layout(2)), nc::ContractError);
}

TEST_CASE("checkpoint round-trip is value-exact") {
    std::mt19937_64 rng(29);
    nc::NamedTensors t;
    t["a"] = rand_tensor({3, 4}, rng);
    t["b.c"] = Tensor::from({5}, {1e-300, -0.0, 3.141592653589793, 1e300, -7.25});
    t["s"] = Tensor::scalar(42.0);
    auto path = std::filesystem::temp_directory_path() / "llmkt_ckpt_test.bin";
    nc::save_tensors(path, t);
    auto back = nc::load_tensors(path);
    REQUIRE(back.size() == 3);
    for (const auto& [name, v] : t) {
        CHECK(back.at(name).shape() == v.shape());
        CHECK(std::equal(v.data().begin(), v.data().end(), back.at(name).data().begin()));
    }
    CHECK(nc::checksum(back) == nc::checksum(t));

    nc::NamedTensors dst{{"a", Tensor::zeros({3, 4})}};
    nc::assign_tensors(back, dst);
    CHECK(nc::checksum(dst.at("a")) == nc::checksum(t.at("a")));
    nc::NamedTensors bad{{"a", Tensor::zeros({4, 3})}};
    CHECK_THROWS(nc::assign_tensors(back, bad));

    std::filesystem::resize_file(path, 40);
    CHECK_THROWS(nc::load_tensors(path));
    std::filesystem::remove(path);
}

TEST_CASE("tensor construction contracts") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0}), nc::ContractError);
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(nc::add(a, b), nc::ContractError);
    CHECK_THROWS_AS(nc::matmul(a, a), nc::ContractError);
    CHECK(nc::matmul(a, b).shape() == nc::Shape{2, 2});
}
