// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "llmkt/data/data.hpp"
#include "llmkt/data/synth.hpp"
#include "llmkt/fusion/fusion.hpp"
#include "llmkt/numcore/gradcheck.hpp"
#include "llmkt/numcore/ops.hpp"

using namespace llmkt;
using namespace llmkt::fusion;
using numcore::Tensor;

namespace {

Tensor rowv(std::vector<double> v) {
    const auto n = v.size();
    return Tensor::from({1, n}, std::move(v));
}

std::vector<double> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

seqkt::IdEmbeddings random_ids(int nq, int nc, int d_s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    seqkt::IdEmbeddings e;
    e.d_s = d_s;
    e.questions.assign(static_cast<std::size_t>(nq), std::vector<double>(static_cast<std::size_t>(d_s)));
    e.concepts.assign(static_cast<std::size_t>(nc), std::vector<double>(static_cast<std::size_t>(d_s)));
    for (auto* bank : {&e.questions, &e.concepts})
        for (auto& v : *bank)
            for (auto& x : v) x = n(rng);
    return e;
}

}  // namespace

TEST_CASE("merge functions on a worked example") {
    Tensor a = rowv({1, 2}), b = rowv({3, 4});
    CHECK(vals(merge(MergeKind::Add, a, b)) == std::vector<double>{4, 6});
    CHECK(vals(merge(MergeKind::Avg, a, b)) == std::vector<double>{2, 3});
    // Concat with a [I I] projection reduces to addition.
    Tensor w = Tensor::from({2, 4}, {1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(vals(merge(MergeKind::Concat, a, b, w)) == std::vector<double>{4, 6});
}

TEST_CASE("merge algebra") {
    std::mt19937_64 rng(3);
    Tensor a = numcore::randn({3, 5}, 1.0, rng, false), b = numcore::randn({3, 5}, 1.0, rng, false);
    for (auto g : {MergeKind::Add, MergeKind::Avg}) CHECK(vals(merge(g, a, b)) == vals(merge(g, b, a)));
    auto avg = vals(merge(MergeKind::Avg, a, a));
    for (std::size_t i = 0; i < avg.size(); ++i) CHECK(avg[i] == doctest::Approx(a.data()[i]).epsilon(1e-15));
    CHECK(vals(merge(MergeKind::Add, a, Tensor::zeros({3, 5}))) == vals(a));
}

TEST_CASE("single modality passes through or is zero-padded") {
    Tensor a = rowv({1, -2});
    CHECK(vals(merge(MergeKind::Add, a, Tensor{})) == vals(a));
    CHECK(vals(merge(MergeKind::Avg, Tensor{}, a)) == vals(a));
    Tensor w = Tensor::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(vals(merge(MergeKind::Concat, a, Tensor{}, w)) == std::vector<double>{1 - 4, 5 - 12});
    CHECK(vals(merge(MergeKind::Concat, Tensor{}, a, w)) == std::vector<double>{3 - 8, 7 - 16});
    CHECK_THROWS_AS(merge(MergeKind::Add, Tensor{}, Tensor{}), numcore::ContractError);
    CHECK_THROWS_AS(merge(MergeKind::Add, a, rowv({1, 2, 3})), numcore::ContractError);
    CHECK_THROWS_AS(merge(MergeKind::Concat, a, a), numcore::ContractError);

    auto v = merge(MergeKind::Avg, std::optional<std::vector<double>>{}, std::optional<std::vector<double>>{{0.5, 1.5}});
    CHECK(v == std::vector<double>{0.5, 1.5});
}

TEST_CASE("adapters map zero to zero with zero biases and to the bias with zero output weights") {
    auto a = init_adapter(AdapterKind::Context, 6, 4, 1);
    CHECK(vals(adapt(a, Tensor::zeros({2, 6}))) == std::vector<double>(8, 0.0));
    for (auto& v : a.params.at("w2").mutable_data()) v = 0.0;
    auto b2 = a.params.at("b2").mutable_data();
    for (std::size_t i = 0; i < b2.size(); ++i) b2[i] = 0.1 * static_cast<double>(i + 1);
    context::ContextVec r{{1, 2, 3, 4, 5, 6}, context::TextSource::QText};
    CHECK(adapt_context(a, r) == std::vector<double>{0.1, 0.2, 0.30000000000000004, 0.4});
    CHECK_THROWS_AS(adapt_sequence(a, r.values), numcore::ContractError);
    CHECK_THROWS_AS(adapt(a, Tensor::zeros({1, 5})), numcore::ContractError);
}

TEST_CASE("adapter and projection gradient checks") {
    std::mt19937_64 rng(4);
    Tensor r = numcore::randn({3, 6}, 1.0, rng, false);
    for (auto kind : {AdapterKind::Context, AdapterKind::Sequence}) {
        auto a = init_adapter(kind, 6, 5, 7);
        std::vector<Tensor> ps;
        for (auto& [k, t] : a.params) ps.push_back(t);
        auto res = numcore::grad_check([&] { auto h = adapt(a, r); return numcore::sum(numcore::mul(h, h)); }, ps);
        CHECK(res.max_rel_error < 1e-5);
    }
    FusionConfig cfg;
    cfg.merge = MergeKind::Concat;
    cfg.d_e = 5;
    auto m = init_fusion(cfg, 6, 4, 2);
    Tensor s = numcore::randn({3, 4}, 1.0, rng, false);
    auto res = numcore::grad_check(
        [&] {
            Tensor h = merge(MergeKind::Concat, adapt(m.context_adapter, r), adapt(m.sequence_adapter, s), m.projection);
            return numcore::sum(numcore::mul(h, h));
        },
        m.parameters());
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("slot vectors over a synthetic window") {
    data::SynthSpec spec;
    spec.n_students = 4;
    auto ds = data::Dataset::from_interactions(data::synth_generate(spec).interactions);
    auto vocab = prompt::build_vocab(ds);
    context::ContextConfig cc{8, 2, 12, false};
    auto enc = context::init_context_encoder(cc, vocab.size(), 3);
    auto ids = random_ids(ds.n_questions, ds.n_concepts, 6, 5);
    auto wins = data::window_histories(ds, 1, 6);
    const auto& w = wins.back();
    auto plan = prompt::plan_prompt(prompt::TemplateKind::Type1, w, vocab);

    for (auto g : {MergeKind::Add, MergeKind::Avg, MergeKind::Concat}) {
        FusionConfig cfg;
        cfg.merge = g;
        cfg.d_e = 10;
        auto m = init_fusion(cfg, 8, 6, 9);
        auto fused = build_slot_embeddings(w, plan, m, {&enc, &vocab, &ids});
        REQUIRE(fused.size() == plan.bindings.size());
        for (std::size_t i = 0; i < fused.size(); ++i) {
            CHECK(fused[i].values.size() == 10);
            CHECK(fused[i].entity == plan.bindings[i].slot);
            CHECK(fused[i].has_context);
            CHECK(fused[i].has_sequence);
        }
        if (g == MergeKind::Concat) continue;
        // Oracle: per-binding adapters and merge.
        const auto reqs = slot_requests(plan, w);
        for (std::size_t i = 0; i < reqs.size(); ++i) {
            auto hc = adapt_context(m.context_adapter,
                                    context::encode_text(enc, vocab, *reqs[i].text, context::TextSource::QText));
            const auto& bank = reqs[i].slot == prompt::SlotKind::Ques ? ids.questions : ids.concepts;
            auto hs = adapt_sequence(m.sequence_adapter, bank[static_cast<std::size_t>(reqs[i].entity_id)]);
            auto e = merge(g, hc, hs);
            for (std::size_t j = 0; j < e.size(); ++j) CHECK(fused[i].values[j] == doctest::Approx(e[j]).epsilon(1e-12));
        }
    }
}

TEST_CASE("ablated fusion uses one branch only") {
    data::SynthSpec spec;
    spec.n_students = 3;
    auto ds = data::Dataset::from_interactions(data::synth_generate(spec).interactions);
    auto vocab = prompt::build_vocab(ds);
    auto enc = context::init_context_encoder(context::ContextConfig{8, 2, 12, false}, vocab.size(), 3);
    auto ids = random_ids(ds.n_questions, ds.n_concepts, 6, 5);
    auto w = data::window_histories(ds, 0, 3).back();
    auto plan = prompt::plan_prompt(prompt::TemplateKind::Type1, w, vocab);

    FusionConfig no_seq;
    no_seq.d_e = 10;
    no_seq.use_sequence = false;
    auto m = init_fusion(no_seq, 8, 6, 1);
    CHECK(m.named().count("seq.w1") == 0);
    for (const auto& v : build_slot_embeddings(w, plan, m, {&enc, &vocab, &ids})) {
        CHECK(v.has_context);
        CHECK_FALSE(v.has_sequence);
    }
    FusionConfig no_ctx = no_seq;
    no_ctx.use_sequence = true;
    no_ctx.use_context = false;
    auto n = init_fusion(no_ctx, 8, 6, 1);
    for (const auto& v : build_slot_embeddings(w, plan, n, {&enc, &vocab, &ids})) {
        CHECK_FALSE(v.has_context);
        CHECK(v.has_sequence);
    }
    FusionConfig none = no_ctx;
    none.use_sequence = false;
    CHECK_THROWS_AS(init_fusion(none, 8, 6, 1), numcore::ContractError);
}

TEST_CASE("items lacking text fall back to the sequence branch per row") {
    FusionConfig cfg;
    cfg.merge = MergeKind::Avg;
    cfg.d_e = 4;
    auto m = init_fusion(cfg, 8, 3, 2);
    auto vocab = prompt::Vocab::build({"Fractions"});
    auto enc = context::init_context_encoder(context::ContextConfig{8, 2, 12, false}, vocab.size(), 3);
    auto ids = random_ids(2, 2, 3, 4);
    std::vector<SlotRequest> reqs{{prompt::SlotKind::Conc, 1, std::string("Fractions")}, {prompt::SlotKind::Ques, 0, {}}};
    auto b = embed_slots(m, {&enc, &vocab, &ids}, reqs);
    CHECK(b.has_context == std::vector<bool>{true, false});
    auto hs = adapt_sequence(m.sequence_adapter, ids.questions[0]);
    for (std::size_t j = 0; j < 4; ++j) CHECK(b.vectors.data()[4 + j] == doctest::Approx(hs[j]).epsilon(1e-12));

    std::vector<SlotRequest> orphan{{prompt::SlotKind::Ques, 5, {}}};
    CHECK_THROWS_AS(embed_slots(m, {&enc, &vocab, &ids}, orphan), numcore::ContractError);
}

TEST_CASE("merge names parse") {
    CHECK(parse_merge_kind("Concat") == MergeKind::Concat);
    CHECK(parse_merge_kind("avg") == MergeKind::Avg);
    CHECK(to_string(MergeKind::Add) == "add");
    CHECK_THROWS_AS(parse_merge_kind("max"), numcore::ContractError);
}
