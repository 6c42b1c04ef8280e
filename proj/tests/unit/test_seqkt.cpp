// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "llmkt/data/data.hpp"
#include "llmkt/data/synth.hpp"
#include "llmkt/eval/metrics.hpp"
#include "llmkt/numcore/gradcheck.hpp"
#include "llmkt/seqkt/seqkt.hpp"

using namespace llmkt;
using namespace llmkt::seqkt;
using numcore::Tensor;

namespace {

SeqConfig small_config(SeqKind kind) {
    SeqConfig c;
    c.kind = kind;
    c.d_s = 5;
    c.hidden = 4;
    c.n_questions = 6;
    c.n_concepts = 3;
    return c;
}

std::vector<SeqStep> random_steps(std::size_t n, std::mt19937_64& rng, int nq = 6, int nc = 3) {
    std::vector<SeqStep> out;
    for (std::size_t i = 0; i < n; ++i) {
        const int q = static_cast<int>(rng() % static_cast<std::uint64_t>(nq));
        out.push_back({q, q % nc, rng() % 2 == 0});
    }
    return out;
}

struct SynthSplit {
    data::Dataset ds;
    data::DatasetSplit split;
};

SynthSplit synth_split(int students) {
    data::SynthSpec spec;
    spec.n_students = students;
    SynthSplit s{data::Dataset::from_interactions(data::synth_generate(spec).interactions), {}};
    s.split = data::split_students(s.ds.student_ids(), 42);
    return s;
}

SeqConfig synth_config(const data::Dataset& ds, SeqKind kind) {
    SeqConfig c;
    c.kind = kind;
    c.d_s = 32;
    c.hidden = 32;
    c.n_questions = ds.n_questions;
    c.n_concepts = ds.n_concepts;
    return c;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    const double ab = std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    const double aa = std::inner_product(a.begin(), a.end(), a.begin(), 0.0);
    const double bb = std::inner_product(b.begin(), b.end(), b.begin(), 0.0);
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("DKT with empty history returns the head-bias prior") {
    auto m = init_seq_encoder(small_config(SeqKind::DKT), 1);
    auto b = m.params.at("head_q.b");
    for (std::size_t i = 0; i < b.numel(); ++i) b.mutable_data()[i] = 0.3 * static_cast<double>(i) - 0.7;
    auto p = dkt_forward(m, {});
    REQUIRE(p.size() == 6);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0 / (1.0 + std::exp(-(0.3 * i - 0.7)))));
}

TEST_CASE("DKT probabilities lie strictly inside (0,1)") {
    auto m = init_seq_encoder(small_config(SeqKind::DKT), 2);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto h = random_steps(1 + rng() % 15, rng);
        for (double v : dkt_forward(m, h)) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("out-of-range ids are rejected") {
    auto dkt = init_seq_encoder(small_config(SeqKind::DKT), 1);
    std::vector<SeqStep> bad{{6, 0, true}};
    CHECK_THROWS_AS(dkt_forward(dkt, bad), numcore::ContractError);
    auto akt = init_seq_encoder(small_config(SeqKind::AKTLite), 1);
    std::vector<SeqStep> ok{{1, 1, true}};
    CHECK_THROWS_AS(akt_forward(akt, ok, SeqStep{1, 3, true}), numcore::ContractError);
}

TEST_CASE("AKT-lite large decay concentrates on the most recent item") {
    auto m = init_seq_encoder(small_config(SeqKind::AKTLite), 4);
    std::mt19937_64 rng(5);
    auto h = random_steps(8, rng);
    set_akt_decay(m, 200.0);
    auto w = akt_attention_weights(m, h, SeqStep{2, 2, false});
    REQUIRE(w.size() == 8);
    CHECK(w.back() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(akt_decay(m) == doctest::Approx(200.0));
}

TEST_CASE("AKT-lite zero decay and identical keys give uniform weights") {
    auto m = init_seq_encoder(small_config(SeqKind::AKTLite), 4);
    set_akt_decay(m, 1e-300);
    std::vector<SeqStep> h(7, SeqStep{3, 0, true});
    auto w = akt_attention_weights(m, h, SeqStep{1, 1, false});
    for (double v : w) CHECK(std::abs(v - 1.0 / 7.0) < 1e-12);
}

TEST_CASE("AKT-lite attention weights are a distribution") {
    auto m = init_seq_encoder(small_config(SeqKind::AKTLite), 6);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        auto h = random_steps(1 + rng() % 20, rng);
        auto w = akt_attention_weights(m, h, SeqStep{0, 0, true});
        double s = 0;
        for (double v : w) {
            CHECK(v >= 0.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
        const double p = akt_forward(m, h, SeqStep{0, 0, true});
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
}

TEST_CASE("recurrent cell gradient check") {
    auto m = init_seq_encoder(small_config(SeqKind::DKT), 8);
    std::mt19937_64 rng(9);
    std::vector<std::vector<SeqStep>> seqs{random_steps(5, rng), random_steps(3, rng)};
    auto res = numcore::grad_check([&] { return seq_batch_loss(m, seqs, 100); }, m.parameters());
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("monotonic attention gradient check") {
    auto m = init_seq_encoder(small_config(SeqKind::AKTLite), 10);
    std::mt19937_64 rng(11);
    std::vector<std::vector<SeqStep>> seqs{random_steps(6, rng), random_steps(4, rng)};
    auto res = numcore::grad_check([&] { return seq_batch_loss(m, seqs, 3); }, m.parameters());
    CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("concept-only and question-only models") {
    SeqConfig c = small_config(SeqKind::DKT);
    c.n_questions = 0;
    auto m = init_seq_encoder(c, 1);
    std::vector<SeqStep> h{{-1, 1, true}, {-1, 2, false}};
    CHECK(dkt_forward(m, h).size() == 3);
    c.kind = SeqKind::AKTLite;
    auto a = init_seq_encoder(c, 1);
    CHECK(a.params.count("aux.w1") == 0);
    auto e = extract_id_embeddings(a);
    CHECK(e.questions.empty());
    CHECK(e.concepts.size() == 3);
}

TEST_CASE("DKT training improves loss, is deterministic and beats a constant predictor") {
    auto s = synth_split(100);
    SeqTrainConfig tc;
    tc.epochs = 4;
    auto cfg = synth_config(s.ds, SeqKind::DKT);
    auto a = train_seq_encoder(s.ds, s.split.train, s.split.valid, cfg, tc);
    CHECK(a.report.train_loss.front() < a.report.initial_loss);
    CHECK(a.report.best_valid_auc > 0.6);
    auto b = train_seq_encoder(s.ds, s.split.train, s.split.valid, cfg, tc);
    CHECK(numcore::checksum(a.model.params) == numcore::checksum(b.model.params));

    std::vector<std::string> warnings;
    auto e = extract_id_embeddings(a.model, &warnings);
    CHECK(warnings.empty());
    REQUIRE(e.questions.size() == 60);
    REQUIRE(e.concepts.size() == 12);
    for (const auto& v : e.questions) CHECK(v.size() == 32);
    CHECK(cosine(e.questions[0], e.questions[1]) < 1 - 1e-6);
    // extraction averages the correct/incorrect input rows
    const auto in = a.model.param("dkt.in_q").data();
    CHECK(e.questions[5][3] == doctest::Approx(0.5 * (in[5 * 32 + 3] + in[65 * 32 + 3])));
}

TEST_CASE("AKT-lite training and extraction") {
    auto s = synth_split(60);
    SeqTrainConfig tc;
    tc.epochs = 3;
    auto a = train_seq_encoder(s.ds, s.split.train, s.split.valid, synth_config(s.ds, SeqKind::AKTLite), tc);
    CHECK(a.report.train_loss.front() < a.report.initial_loss);
    CHECK(a.report.best_valid_auc > 0.55);
    auto e = extract_id_embeddings(a.model);
    const auto emb = a.model.param("akt.emb_q").data();
    for (std::size_t j = 0; j < 32; ++j) CHECK(e.questions[7][j] == emb[7 * 32 + j]);
}

TEST_CASE("untrained extraction warns") {
    auto m = init_seq_encoder(small_config(SeqKind::DKT), 1);
    std::vector<std::string> warnings;
    auto e = extract_id_embeddings(m, &warnings);
    CHECK(warnings.size() == 1);
    CHECK(e.questions.size() == 6);
}

TEST_CASE("window predictions agree with direct forwards") {
    auto s = synth_split(12);
    for (auto kind : {SeqKind::DKT, SeqKind::AKTLite}) {
        auto m = init_seq_encoder(synth_config(s.ds, kind), 3);
        for (std::size_t L : {5u, 100u}) {
            auto wins = data::window_histories(s.ds, 0, L);
            auto batch = predict_windows(m, s.ds, wins);
            for (std::size_t i = 0; i < wins.size(); i += 7) {
                std::vector<SeqStep> h;
                for (const auto& it : wins[i].history) h.push_back(to_step(it));
                CHECK(batch[i] == doctest::Approx(seq_predict(m, h, to_step(*wins[i].target))).epsilon(1e-10));
            }
        }
    }
}

TEST_CASE("sequence model checkpoint round-trip") {
    auto m = init_seq_encoder(small_config(SeqKind::AKTLite), 12);
    m.trained = true;
    auto stem = std::filesystem::temp_directory_path() / "llmkt_seq_model";
    save_seq_model(stem, m);
    auto back = load_seq_model(stem);
    CHECK(back.trained);
    CHECK(numcore::checksum(back.params) == numcore::checksum(m.params));
    CHECK(back.config.kind == SeqKind::AKTLite);
}

TEST_CASE("empty training split is an error") {
    auto s = synth_split(12);
    CHECK_THROWS(train_seq_encoder(s.ds, {}, s.split.valid, synth_config(s.ds, SeqKind::DKT), SeqTrainConfig{}));
}
