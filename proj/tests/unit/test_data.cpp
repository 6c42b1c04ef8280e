// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "llmkt/data/data.hpp"
#include "llmkt/data/synth.hpp"

namespace fs = std::filesystem;
using namespace llmkt::data;

namespace {

fs::path write_tmp(const std::string& name, const std::string& body) {
    auto p = fs::temp_directory_path() / ("llmkt_test_" + name);
    std::ofstream(p, std::ios::binary) << body;
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Rank AUC with average ranks for ties; independent of the eval module.
double rank_auc(std::vector<std::pair<double, bool>> v) {
    std::sort(v.begin(), v.end());
    double rank_sum = 0.0;
    std::size_t npos = 0;
    for (std::size_t i = 0; i < v.size();) {
        std::size_t j = i;
        while (j < v.size() && v[j].first == v[i].first) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (v[k].second) {
                rank_sum += avg;
                ++npos;
            }
        i = j;
    }
    const double nneg = static_cast<double>(v.size() - npos);
    return (rank_sum - 0.5 * static_cast<double>(npos) * static_cast<double>(npos + 1)) / (static_cast<double>(npos) * nneg);
}

Dataset make_dataset(int students, int per_student) {
    std::vector<Interaction> rows;
    for (int s = 0; s < students; ++s) {
        for (int t = 0; t < per_student; ++t) {
            Interaction it;
            it.student_id = "s" + std::to_string(s);
            it.question_id = t % 7;
            it.concept_ids = {t % 3};
            it.correct = (t + s) % 2 == 0;
            it.seq_index = t;
            rows.push_back(it);
        }
    }
    return Dataset::from_interactions(rows);
}

}  // namespace

TEST_CASE("native CSV with three valid rows") {
    auto p = write_tmp("native.csv",
                       "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n"
                       "a,0,4,1;2,1,\"What is 1, 2?\",Alpha;Beta\n"
                       "a,1,5,2,0,,Beta\n"
                       "b,0,,3,1,,\n");
    auto r = load_csv(p, SchemaKind::Native);
    REQUIRE(r.interactions.size() == 3);
    CHECK(r.dropped == 0);
    CHECK(r.interactions[0].concept_ids == std::vector<int>{1, 2});
    CHECK(r.interactions[0].question_text.value() == "What is 1, 2?");
    CHECK(r.interactions[0].concept_texts == std::vector<std::string>{"Alpha", "Beta"});
    CHECK_FALSE(r.interactions[2].question_id.has_value());
    auto ds = Dataset::from_interactions(r.interactions);
    CHECK(ds.students.size() == 2);
    CHECK(ds.n_questions == 6);
    CHECK(ds.n_concepts == 4);
    CHECK_FALSE(ds.fields.question_ids);
    CHECK(ds.fields.concept_ids);
}

TEST_CASE("native rows lacking both ids are dropped with a warning") {
    auto p = write_tmp("native_drop.csv",
                       "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n"
                       "a,0,4,1,1,,\n"
                       "a,1,,,1,,\n");
    auto r = load_csv(p, SchemaKind::Native);
    CHECK(r.interactions.size() == 1);
    CHECK(r.dropped == 1);
    CHECK(r.warnings.size() == 1);
}

TEST_CASE("assist-like rows with empty skill fields are dropped") {
    auto p = write_tmp("assist.csv",
                       "order_id,user_id,problem_id,correct,skill_id,skill_name\n"
                       "30,u1,100,1,7,Addition\n"
                       "10,u1,101,0,7,Addition\n"
                       "20,u1,102,1,,Addition\n"
                       "40,u1,103,1,8,\n"
                       "50,u2,100,0,7,Addition\n");
    auto r = load_csv(p, SchemaKind::AssistLike);
    REQUIRE(r.interactions.size() == 3);
    CHECK(r.dropped == 2);
    // chronological by order_id
    CHECK(r.interactions[0].question_id.value() == 101);
    CHECK(r.interactions[1].question_id.value() == 100);
    CHECK(r.interactions[0].concept_texts == std::vector<std::string>{"Addition"});
    auto ds = Dataset::from_interactions(r.interactions);
    CHECK(ds.fields.question_ids);
    CHECK(ds.fields.concept_ids);
    CHECK(ds.fields.concept_text);
    CHECK_FALSE(ds.fields.question_text);
}

TEST_CASE("assist 2015 form yields concept ids only") {
    auto p = write_tmp("assist15.csv",
                       "user_id,log_id,sequence_id,correct\n"
                       "7,2,5001,1\n"
                       "7,1,5002,0\n"
                       "7,3,5001,0.5\n");
    auto r = load_csv(p, SchemaKind::AssistLike);
    REQUIRE(r.interactions.size() == 2);
    CHECK(r.dropped == 1);
    CHECK_FALSE(r.interactions[0].question_id.has_value());
    CHECK(r.interactions[0].concept_ids == std::vector<int>{5002});
}

TEST_CASE("junyi-like file has question ids only") {
    auto p = write_tmp("junyi.csv",
                       "timestamp_TW,uuid,upid,is_correct\n"
                       "2019-01-02 10:00:00,Aa,xQ1,True\n"
                       "2019-01-01 10:00:00,Aa,xQ2,False\n"
                       "2019-01-01 11:00:00,Bb,xQ1,True\n");
    auto r = load_csv(p, SchemaKind::JunyiLike);
    REQUIRE(r.interactions.size() == 3);
    for (const auto& it : r.interactions) CHECK(it.concept_ids.empty());
    // opaque ids are densely numbered by first appearance
    CHECK(r.interactions[0].question_id.value() == 1);
    CHECK(r.interactions[1].question_id.value() == 0);
    auto ds = Dataset::from_interactions(r.interactions);
    CHECK(ds.fields.question_ids);
    CHECK_FALSE(ds.fields.concept_ids);
}

TEST_CASE("nips-like file with subject lists and texts") {
    auto p = write_tmp("nips.csv",
                       "UserId,QuestionId,IsCorrect,DateAnswered,SubjectId,QuestionText,SubjectText\n"
                       "9,290,1,2020-01-02,\"[3, 71]\",How would this calculation be written?,Basic Arithmetic\n"
                       "9,749,0,2020-01-01,[3],Which symbol belongs in the box?,Basic Arithmetic\n");
    auto r = load_csv(p, SchemaKind::NipsLike);
    REQUIRE(r.interactions.size() == 2);
    CHECK(r.interactions[0].question_id.value() == 749);
    CHECK(r.interactions[1].concept_ids == std::vector<int>{3, 71});
    auto ds = Dataset::from_interactions(r.interactions);
    CHECK(ds.fields.question_text);
    CHECK(ds.fields.concept_text);
}

TEST_CASE("malformed CSV reports the line number") {
    auto p = write_tmp("bad.csv",
                       "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n"
                       "a,0,4,1,1,,\n"
                       "a,1,4,1,1,\n");
    try {
        load_csv(p, SchemaKind::Native);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    auto q = write_tmp("bad2.csv",
                       "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n"
                       "a,0,4,1,1,\"open,\n");
    try {
        load_csv(q, SchemaKind::Native);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    auto r = write_tmp("bad3.csv",
                       "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n"
                       "a,x,4,1,1,,\n");
    CHECK_THROWS_AS(load_csv(r, SchemaKind::Native), ParseError);
}

TEST_CASE("unknown schema is rejected") {
    CHECK_THROWS_AS(parse_schema_kind("ednet"), DataError);
    CHECK(parse_schema_kind("assist-like") == SchemaKind::AssistLike);
    CHECK(parse_schema_kind("native") == SchemaKind::Native);
}

TEST_CASE("non-increasing seq_index is rejected") {
    std::vector<Interaction> rows(2);
    rows[0].student_id = rows[1].student_id = "a";
    rows[0].question_id = rows[1].question_id = 1;
    rows[0].seq_index = rows[1].seq_index = 3;
    CHECK_THROWS_AS(Dataset::from_interactions(rows), DataError);
}

TEST_CASE("split sizes follow 8:1:1 with remainder to train") {
    auto ids = [](int n) {
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("s" + std::to_string(i));
        return v;
    };
    auto s10 = split_students(ids(10), 1);
    CHECK(s10.train.size() == 8);
    CHECK(s10.valid.size() == 1);
    CHECK(s10.test.size() == 1);
    auto s12 = split_students(ids(12), 1);
    CHECK(s12.train.size() == 10);
    CHECK(s12.valid.size() == 1);
    CHECK(s12.test.size() == 1);
    auto s300 = split_students(ids(300), 42);
    CHECK(s300.train.size() == 240);
    CHECK(s300.valid.size() == 30);
    CHECK(split_students(ids(300), 42).train == s300.train);
    CHECK(split_students(ids(300), 43).train != s300.train);
    CHECK_THROWS_AS(split_students(ids(2), 1), DataError);
}

TEST_CASE("splits are seeded partitions for random sizes") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 200);
        std::vector<std::string> v;
        for (int i = 0; i < n; ++i) v.push_back("id" + std::to_string(i));
        std::shuffle(v.begin(), v.end(), rng);
        const auto seed = rng();
        auto s = split_students(v, seed);
        std::multiset<std::string> all(s.train.begin(), s.train.end());
        all.insert(s.valid.begin(), s.valid.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == static_cast<std::size_t>(n));
        CHECK(std::set<std::string>(all.begin(), all.end()).size() == static_cast<std::size_t>(n));
        CHECK(s.valid.size() == std::max(1, n / 10));
        // input order must not matter
        std::reverse(v.begin(), v.end());
        CHECK(split_students(v, seed).test == s.test);
    }
}

TEST_CASE("split manifest round-trips") {
    std::vector<std::string> v{"a", "b", "c", "d"};
    auto s = split_students(v, 5);
    auto p = fs::temp_directory_path() / "llmkt_split.json";
    save_split(p, s);
    auto back = load_split(p);
    CHECK(back.seed == 5);
    CHECK(back.train == s.train);
    CHECK(back.valid == s.valid);
    CHECK(back.test == s.test);
}

TEST_CASE("three interactions give two windows") {
    auto ds = make_dataset(1, 3);
    auto w = window_histories(ds, 0, 100);
    REQUIRE(w.size() == 2);
    CHECK(w[0].history.size() == 1);
    CHECK(w[1].history.size() == 2);
    CHECK(w[1].label == ds.students[0].interactions[2].correct);
    CHECK(window_histories(make_dataset(1, 1), 0, 100).empty());
    CHECK_THROWS_AS(window_histories(ds, 0, 0), DataError);
}

TEST_CASE("long histories keep the most recent L predecessors") {
    auto ds = make_dataset(1, 150);
    auto w = window_histories(ds, 0, 100);
    REQUIRE(w.size() == 149);
    const auto& last = w.back();
    CHECK(last.target->seq_index == 149);
    // brute-force enumeration of the expected predecessor set
    std::vector<std::int64_t> expected;
    for (std::int64_t i = 0; i < 149; ++i)
        if (149 - i <= 100) expected.push_back(i);
    REQUIRE(last.history.size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) CHECK(last.history[i].seq_index == expected[i]);
}

TEST_CASE("length sweep changes only truncation") {
    auto ds = make_dataset(4, 120);
    auto ids = ds.student_ids();
    std::vector<std::vector<HistoryWindow>> runs;
    for (std::size_t L : {20u, 50u, 100u}) runs.push_back(window_histories(ds, ids, L));
    for (std::size_t r = 1; r < runs.size(); ++r) {
        REQUIRE(runs[r].size() == runs[0].size());
        for (std::size_t i = 0; i < runs[0].size(); ++i) CHECK(runs[r][i].target == runs[0][i].target);
    }
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const std::size_t L = std::array<std::size_t, 3>{20, 50, 100}[r];
        for (const auto& w : runs[r]) {
            CHECK(w.history.size() <= L);
            for (const auto& h : w.history) CHECK(h.seq_index < w.target->seq_index);
            for (std::size_t i = 1; i < w.history.size(); ++i) CHECK(w.history[i - 1].seq_index < w.history[i].seq_index);
        }
    }
}

TEST_CASE("synthetic generator is deterministic") {
    SynthSpec spec;
    spec.n_students = 20;
    auto a = synth_generate(spec);
    auto b = synth_generate(spec);
    auto pa = fs::temp_directory_path() / "llmkt_synth_a.csv";
    auto pb = fs::temp_directory_path() / "llmkt_synth_b.csv";
    write_native_csv(pa, a.interactions);
    write_native_csv(pb, b.interactions);
    CHECK(slurp(pa) == slurp(pb));
    write_oracle_csv(pa, a);
    write_oracle_csv(pb, b);
    CHECK(slurp(pa) == slurp(pb));
    spec.seed = 7;
    write_native_csv(pb, synth_generate(spec).interactions);
    write_native_csv(pa, a.interactions);
    CHECK(slurp(pa) != slurp(pb));
}

TEST_CASE("synthetic output round-trips through the native loader") {
    SynthSpec spec;
    spec.n_students = 5;
    spec.interactions_per_student = 12;
    auto a = synth_generate(spec);
    auto p = fs::temp_directory_path() / "llmkt_synth_rt.csv";
    write_native_csv(p, a.interactions);
    auto r = load_csv(p, SchemaKind::Native);
    REQUIRE(r.interactions.size() == a.interactions.size());
    for (std::size_t i = 0; i < a.interactions.size(); ++i) {
        CHECK(r.interactions[i].question_text == a.interactions[i].question_text);
        CHECK(r.interactions[i].concept_texts == a.interactions[i].concept_texts);
        CHECK(r.interactions[i].correct == a.interactions[i].correct);
    }
    auto oracle = read_oracle_csv((write_oracle_csv(p, a), p));
    REQUIRE(oracle.size() == a.oracle_p.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::get<2>(oracle[i]) == a.oracle_p[i]);
}

TEST_CASE("logistic oracle values") {
    CHECK(logistic(0.0) == 0.5);
    // Monte-Carlo estimate of P(correct) at s - d = 1
    std::mt19937_64 rng(1234);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) hits += u(rng) < logistic(1.0);
    CHECK(std::abs(static_cast<double>(hits) / n - 0.731) < 0.01);
}

TEST_CASE("default synthetic oracle is informative") {
    auto res = synth_generate(SynthSpec{});
    CHECK(res.interactions.size() == 30000);
    std::vector<std::pair<double, bool>> scored;
    for (std::size_t i = 0; i < res.interactions.size(); ++i) {
        CHECK(res.oracle_p[i] > 0.0);
        CHECK(res.oracle_p[i] < 1.0);
        scored.emplace_back(res.oracle_p[i], res.interactions[i].correct);
    }
    CHECK(rank_auc(scored) > 0.70);
    auto ds = Dataset::from_interactions(res.interactions);
    CHECK(ds.n_questions == 60);
    CHECK(ds.n_concepts == 12);
    CHECK(ds.fields.question_text);
    CHECK(ds.fields.concept_text);
}
