// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "llmkt/data/data.hpp"
#include "llmkt/data/synth.hpp"
#include "llmkt/prompt/prompt.hpp"
#include "support/golden_cases.hpp"

using namespace llmkt;
using namespace llmkt::prompt;
using llmkt::testing::item;
using llmkt::testing::type1_window;
using llmkt::testing::Window;
namespace fs = std::filesystem;

namespace {

std::string golden(const std::string& name) {
    std::ifstream is(fs::path(LLMKT_GOLDEN_DIR) / name, std::ios::binary);
    REQUIRE(is.good());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

data::Dataset synth_dataset(int students, int per_student) {
    data::SynthSpec spec;
    spec.n_students = students;
    spec.interactions_per_student = per_student;
    return data::Dataset::from_interactions(data::synth_generate(spec).interactions);
}

}  // namespace

TEST_CASE("goldens for all five templates") {
    for (const auto& g : llmkt::testing::golden_cases()) {
        CAPTURE(g.file);
        CHECK(render(g.kind, g.window.view()) == golden(g.file));
    }
}

TEST_CASE("Type3 rendering has no question ids") {
    Window w{{item(std::nullopt, {15}, true), item(std::nullopt, {30}, false), item(std::nullopt, {30}, true)}};
    CHECK(render(TemplateKind::Type3, w.view()).find("question with ID=") == std::string::npos);
}

TEST_CASE("Type4 is render-only") {
    const auto g = llmkt::testing::golden_cases()[3];
    const auto text = render(TemplateKind::Type4, g.window.view());
    auto vocab = Vocab::build({text});
    auto plan = plan_prompt(TemplateKind::Type4, g.window.view(), vocab);
    CHECK(plan.bindings.empty());
    CHECK(detokenize(plan.token_ids, vocab) == text);
}

TEST_CASE("Type2 with one history item has one QSLOT per item") {
    Window w{{item(3, {}, true), item(4, {}, false)}};
    const auto text = render(TemplateKind::Type2, w.view());
    CHECK(count(text, "[QSLOT]") == 2);
    CHECK(count(text, "[CSLOT]") == 0);
    // the history part alone carries exactly one marker
    const auto cut = text.find("Please predict");
    CHECK(count(text.substr(0, cut), "[QSLOT]") == 1);
    CHECK(count(text.substr(0, cut), "[CSLOT]") == 0);
}

TEST_CASE("reserved tokens are single ids") {
    Vocab v = Vocab::build({golden("type1.txt")});
    auto ids = tokenize("Response: Yes", v);
    REQUIRE(ids.size() == 3);
    CHECK(ids.back() == Vocab::kYes);
    CHECK(tokenize("No", v) == std::vector<int>{Vocab::kNo});
    CHECK(tokenize("[QSLOT]", v) == std::vector<int>{Vocab::kQSlot});
    CHECK(tokenize("[CSLOT]", v) == std::vector<int>{Vocab::kCSlot});
    CHECK(tokenize("zebra", v) == std::vector<int>{Vocab::kUnk});
    CHECK(v.token(Vocab::kYes) == "Yes");
}

TEST_CASE("word segmentation") {
    CHECK(split_words("ID=74 [QSLOT] correctly,") ==
          std::vector<std::string>{"ID", "=", "74", "[QSLOT]", "correctly", ","});
    CHECK(split_words("the student's 'Yes'") == std::vector<std::string>{"the", "student's", "'", "Yes", "'"});
    CHECK(split_words("a\nb") == std::vector<std::string>{"a", "\n", "b"});
    CHECK(split_words("3.5 and -4") == std::vector<std::string>{"3.5", "and", "-4"});
}

TEST_CASE("tokenize and detokenize round-trip on golden text") {
    for (const char* name : {"type1.txt", "type2.txt", "type3.txt", "type4.txt", "type5.txt"}) {
        const auto text = golden(name);
        Vocab v = Vocab::build({text});
        CHECK(detokenize(tokenize(text, v), v) == text);
    }
}

TEST_CASE("plan binding counts") {
    auto w1 = type1_window();
    Vocab v = Vocab::build({golden("type1.txt")});
    auto p1 = plan_prompt(TemplateKind::Type1, w1.view(), v);
    CHECK(p1.bindings.size() == 6);
    CHECK(p1.answer_position == p1.token_ids.size() - 1);
    CHECK(v.token(p1.token_ids[p1.answer_position]) == ":");
    CHECK(p1.bindings[4].is_target());
    CHECK(p1.bindings[4].entity_id == 44);
    CHECK(p1.bindings[5].entity_id == 5);
    CHECK(p1.bindings[0].history_index == 0);
    CHECK(p1.bindings[2].history_index == 1);
    CHECK(p1.bindings[2].entity_id == 42);

    Window w3;
    for (int i = 0; i < 6; ++i) w3.rows.push_back(item(std::nullopt, {i}, i % 2 == 0));
    auto p3 = plan_prompt(TemplateKind::Type3, w3.view(), v);
    CHECK(p3.bindings.size() == 6);
    for (const auto& b : p3.bindings) CHECK(b.slot == SlotKind::Conc);
}

TEST_CASE("ablation reduces to the simpler templates") {
    auto w = type1_window();
    CHECK(render_ablated(TemplateKind::Type1, w.view(), {true, false}) == render(TemplateKind::Type3, w.view()));
    CHECK(render_ablated(TemplateKind::Type1, w.view(), {false, true}) == render(TemplateKind::Type2, w.view()));
    CHECK(render_ablated(TemplateKind::Type1, w.view(), {}) == render(TemplateKind::Type1, w.view()));
    CHECK_THROWS_AS(render_ablated(TemplateKind::Type1, w.view(), {true, true}), TemplateError);
    CHECK_THROWS_AS(render_ablated(TemplateKind::Type2, w.view(), {true, false}), TemplateError);
    Vocab v = Vocab::build({golden("type1.txt")});
    auto p = plan_prompt(TemplateKind::Type1, w.view(), v, {true, false});
    CHECK(p.bindings.size() == 3);
}

TEST_CASE("missing fields name the field") {
    Window w{{item(std::nullopt, {1}, true), item(2, {1}, false)}};
    try {
        render(TemplateKind::Type1, w.view());
        FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
        CHECK(std::string(e.what()).find("question_id") != std::string::npos);
    }
    CHECK_THROWS_AS(render(TemplateKind::Type4, w.view()), TemplateError);
    CHECK_THROWS_AS(render(TemplateKind::Type5, w.view()), TemplateError);
    Window empty{{item(1, {1}, true)}};
    CHECK_THROWS_AS(render(TemplateKind::Type1, empty.view()), TemplateError);
}

TEST_CASE("template availability") {
    data::FieldAvailability junyi{true, false, false, false};
    data::FieldAvailability assist15{false, true, false, false};
    data::FieldAvailability nips{true, true, true, true};
    CHECK(default_kind(junyi) == TemplateKind::Type2);
    CHECK(default_kind(assist15) == TemplateKind::Type3);
    CHECK(default_kind(nips) == TemplateKind::Type1);
    CHECK_FALSE(compatible(TemplateKind::Type1, junyi));
    CHECK_FALSE(compatible(TemplateKind::Type4, assist15));
    CHECK(compatible(TemplateKind::Type4, nips));
    CHECK(compatible(TemplateKind::Type5, nips));
    CHECK(parse_template_kind("type3") == TemplateKind::Type3);
    CHECK_THROWS_AS(parse_template_kind("type9"), TemplateError);
}

TEST_CASE("vocabulary persistence and stability") {
    auto ds = synth_dataset(6, 30);
    Vocab a = build_vocab(ds);
    Vocab b = build_vocab(ds);
    CHECK(a == b);
    auto path = fs::temp_directory_path() / "llmkt_vocab.json";
    a.save(path);
    CHECK(Vocab::load(path) == a);
    CHECK(a.token(Vocab::kQSlot) == "[QSLOT]");
}

TEST_CASE("plans over synthetic windows satisfy the slot invariants") {
    auto ds = synth_dataset(4, 25);
    Vocab v = build_vocab(ds);
    for (auto kind : {TemplateKind::Type1, TemplateKind::Type2, TemplateKind::Type3, TemplateKind::Type4,
                      TemplateKind::Type5}) {
        for (std::size_t s = 0; s < ds.students.size(); ++s) {
            for (const auto& w : data::window_histories(ds, s, 10)) {
                const auto text = render(kind, w);
                CHECK(render(kind, w) == text);
                auto plan = plan_prompt(kind, w, v);
                // independent re-scan of the token stream
                std::vector<std::size_t> slots;
                for (std::size_t i = 0; i < plan.token_ids.size(); ++i)
                    if (plan.token_ids[i] == Vocab::kQSlot || plan.token_ids[i] == Vocab::kCSlot) slots.push_back(i);
                REQUIRE(slots.size() == plan.bindings.size());
                for (std::size_t i = 0; i < slots.size(); ++i) CHECK(plan.bindings[i].position == slots[i]);
                const std::size_t per_item = kind == TemplateKind::Type1   ? 2
                                             : kind == TemplateKind::Type4 ? 0
                                                                           : 1;
                CHECK(plan.bindings.size() == per_item * (w.history.size() + 1));
                for (std::size_t i = 0; i + per_item < plan.bindings.size(); ++i)
                    CHECK_FALSE(plan.bindings[i].is_target());
                for (std::size_t i = plan.bindings.size() - per_item; i < plan.bindings.size(); ++i)
                    CHECK(plan.bindings[i].is_target());
                for (int id : plan.token_ids) CHECK(id != Vocab::kUnk);
                CHECK(plan.answer_position == plan.token_ids.size() - 1);
                CHECK(detokenize(plan.token_ids, v) == text);
            }
        }
    }
}
