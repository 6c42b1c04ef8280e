// SPDX-License-Identifier: Apache-2.0
#include "llmkt/prompt/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <json.hpp>
#include <set>

namespace llmkt::prompt {

namespace {

using data::HistoryWindow;
using data::Interaction;

constexpr std::string_view kHistoryLead = "The student has previously, in chronological order, answered ";
constexpr std::string_view kTargetLead = ". Please predict whether the student will answer the next ";
constexpr std::string_view kTerminal = " correctly. Response with 'Yes' or 'No'. Response:";

constexpr std::string_view kLongIntro =
    "In this task, we aim to determine whether the student can answer the question correctly based on the "
    "student's history record of academic exercises.\n"
    "The student's history record of academic exercises is given as follows:\n";
constexpr std::string_view kLongTargetLead = "The target question is given as follows:\n";
constexpr std::string_view kLongTerminal =
    "Please predict whether the student would answer the target question correctly. Response with 'Yes' or "
    "'No'. Response:";

struct SlotRef {
    SlotKind slot;
    int history_index;
    int entity_id;
};

struct Rendered {
    std::string text;
    std::vector<SlotRef> slots;
};

std::string describe(int history_index) {
    return history_index < 0 ? std::string("target") : "history item " + std::to_string(history_index);
}

int need_question_id(const Interaction& it, int h) {
    if (!it.question_id) throw TemplateError(describe(h) + " lacks question_id");
    return *it.question_id;
}

int need_concept_id(const Interaction& it, int h) {
    if (it.concept_ids.empty()) throw TemplateError(describe(h) + " lacks concept_ids");
    return it.concept_ids.front();
}

const std::string& need_concept_text(const Interaction& it, int h) {
    if (it.concept_texts.empty()) throw TemplateError(describe(h) + " lacks concept_texts");
    return it.concept_texts.front();
}

const std::string& need_question_text(const Interaction& it, int h) {
    if (!it.question_text) throw TemplateError(describe(h) + " lacks question_text");
    return *it.question_text;
}

TemplateKind reduce(TemplateKind kind, DropSet drop) {
    if (drop.question && drop.concepts) throw TemplateError("cannot drop both question and concept");
    switch (kind) {
        case TemplateKind::Type1:
            if (drop.question) return TemplateKind::Type3;
            if (drop.concepts) return TemplateKind::Type2;
            return kind;
        case TemplateKind::Type2:
            if (drop.question) throw TemplateError("Type2 without questions has no content");
            return kind;
        case TemplateKind::Type3:
        case TemplateKind::Type5:
            if (drop.concepts) throw TemplateError(to_string(kind) + " without concepts has no content");
            return kind;
        case TemplateKind::Type4:
            return kind;
    }
    return kind;
}

void render_item(TemplateKind kind, const Interaction& it, int h, Rendered& out) {
    out.text += "question";
    if (kind == TemplateKind::Type1 || kind == TemplateKind::Type2) {
        const int q = need_question_id(it, h);
        out.text += " with ID=" + std::to_string(q) + " ";
        out.text += kQSlotMarker;
        out.slots.push_back({SlotKind::Ques, h, q});
    }
    if (kind == TemplateKind::Type1 || kind == TemplateKind::Type3) {
        const int c = need_concept_id(it, h);
        out.text += " involving concept ID=" + std::to_string(c) + " ";
        out.text += kCSlotMarker;
        out.slots.push_back({SlotKind::Conc, h, c});
    }
    if (kind == TemplateKind::Type5) {
        const int c = need_concept_id(it, h);
        out.text += " involving concept \"" + need_concept_text(it, h) + "\" ";
        out.text += kCSlotMarker;
        out.slots.push_back({SlotKind::Conc, h, c});
    }
}

void render_long_item(const Interaction& it, int h, DropSet drop, Rendered& out) {
    if (!drop.question) out.text += need_question_text(it, h) + "\n";
    if (!drop.concepts && !it.concept_texts.empty()) {
        out.text += "Related knowledge concepts: ";
        for (std::size_t i = 0; i < it.concept_texts.size(); ++i) {
            if (i) out.text += ", ";
            out.text += it.concept_texts[i];
        }
        out.text += "\n";
    }
}

Rendered render_impl(TemplateKind kind, const HistoryWindow& w, DropSet drop) {
    if (!w.target) throw TemplateError("window has no target");
    if (w.history.empty()) throw TemplateError("window has an empty history");
    kind = reduce(kind, drop);
    Rendered out;
    if (kind == TemplateKind::Type4) {
        out.text += kLongIntro;
        for (std::size_t i = 0; i < w.history.size(); ++i) {
            out.text += std::to_string(i + 1) + ") ";
            render_long_item(w.history[i], static_cast<int>(i), drop, out);
            out.text += w.history[i].correct ? "The student answered this question correctly\n"
                                             : "The student answered this question incorrectly\n";
        }
        out.text += kLongTargetLead;
        render_long_item(*w.target, -1, drop, out);
        out.text += kLongTerminal;
        return out;
    }
    out.text += kHistoryLead;
    for (std::size_t i = 0; i < w.history.size(); ++i) {
        if (i) out.text += ", ";
        render_item(kind, w.history[i], static_cast<int>(i), out);
        out.text += w.history[i].correct ? " correctly" : " incorrectly";
    }
    out.text += kTargetLead;
    render_item(kind, *w.target, -1, out);
    out.text += kTerminal;
    return out;
}

bool is_punct(char c) {
    switch (c) {
        case ',':
        case '.':
        case ':':
        case '?':
        case ';':
        case '!':
        case '(':
        case ')':
        case '=':
        case '"':
        case '\'':
            return true;
        default:
            return false;
    }
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool is_quote(const std::string& t) { return t == "\"" || t == "'"; }

bool no_space_before(const std::string& t) {
    return t == "," || t == "." || t == ":" || t == "?" || t == ";" || t == "!" || t == ")" || t == "=";
}

}  // namespace

TemplateKind parse_template_kind(std::string_view s) {
    if (s == "type1" || s == "Type1" || s == "1") return TemplateKind::Type1;
    if (s == "type2" || s == "Type2" || s == "2") return TemplateKind::Type2;
    if (s == "type3" || s == "Type3" || s == "3") return TemplateKind::Type3;
    if (s == "type4" || s == "Type4" || s == "4") return TemplateKind::Type4;
    if (s == "type5" || s == "Type5" || s == "5") return TemplateKind::Type5;
    throw TemplateError("unknown template kind '" + std::string(s) + "'");
}

std::string to_string(TemplateKind k) {
    switch (k) {
        case TemplateKind::Type1:
            return "type1";
        case TemplateKind::Type2:
            return "type2";
        case TemplateKind::Type3:
            return "type3";
        case TemplateKind::Type4:
            return "type4";
        case TemplateKind::Type5:
            return "type5";
    }
    return "?";
}

bool compatible(TemplateKind kind, const data::FieldAvailability& f) {
    switch (kind) {
        case TemplateKind::Type1:
            return f.question_ids && f.concept_ids;
        case TemplateKind::Type2:
            return f.question_ids;
        case TemplateKind::Type3:
            return f.concept_ids;
        case TemplateKind::Type4:
            return f.question_text;
        case TemplateKind::Type5:
            return f.concept_ids && f.concept_text;
    }
    return false;
}

TemplateKind default_kind(const data::FieldAvailability& f) {
    if (f.question_ids && f.concept_ids) return TemplateKind::Type1;
    if (f.question_ids) return TemplateKind::Type2;
    if (f.concept_ids) return TemplateKind::Type3;
    throw TemplateError("dataset has neither question nor concept ids");
}

Vocab::Vocab() {
    add("[PAD]");
    add("[UNK]");
    add(std::string(kQSlotMarker));
    add(std::string(kCSlotMarker));
    add("Yes");
    add("No");
}

int Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts)
        for (auto& w : split_words(t)) words.insert(std::move(w));
    Vocab v;
    for (const auto& w : words) v.add(w);
    return v;
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
    return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(1) << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    const auto j = nlohmann::json::parse(is);
    if (!j.is_object()) throw std::runtime_error("vocabulary file must hold a token to id object");
    std::vector<std::string> by_id(j.size());
    std::vector<bool> seen(j.size(), false);
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto id = it.value().get<std::int64_t>();
        if (id < 0 || static_cast<std::size_t>(id) >= by_id.size() || seen[static_cast<std::size_t>(id)])
            throw std::runtime_error("vocabulary ids must be a permutation of 0..n-1");
        seen[static_cast<std::size_t>(id)] = true;
        by_id[static_cast<std::size_t>(id)] = it.key();
    }
    Vocab v;
    for (std::size_t i = 0; i < by_id.size(); ++i) {
        if (i < static_cast<std::size_t>(kReserved)) {
            if (v.tokens_[i] != by_id[i]) throw std::runtime_error("reserved token mismatch at id " + std::to_string(i));
            continue;
        }
        v.add(by_id[i]);
    }
    return v;
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '\n') {
            flush();
            out.emplace_back("\n");
        } else if (c == ' ' || c == '\t' || c == '\r') {
            flush();
        } else if (c == '[' && (text.substr(i, kQSlotMarker.size()) == kQSlotMarker ||
                                text.substr(i, kCSlotMarker.size()) == kCSlotMarker)) {
            flush();
            out.emplace_back(text.substr(i, kQSlotMarker.size()));
            i += kQSlotMarker.size() - 1;
        } else if (is_punct(c)) {
            const bool prev_alnum = i > 0 && is_alnum(text[i - 1]);
            const bool next_alnum = i + 1 < text.size() && is_alnum(text[i + 1]);
            const bool internal_apostrophe = c == '\'' && prev_alnum && next_alnum && !cur.empty();
            const bool decimal = (c == '.' || c == ',') && prev_alnum && next_alnum && !cur.empty() &&
                                 std::isdigit(static_cast<unsigned char>(text[i - 1])) &&
                                 std::isdigit(static_cast<unsigned char>(text[i + 1]));
            if (internal_apostrophe || decimal) {
                cur.push_back(c);
            } else {
                flush();
                out.emplace_back(1, c);
            }
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
    const auto words = split_words(text);
    std::vector<int> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(vocab.id(w));
    return ids;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    int double_quotes = 0, single_quotes = 0;
    bool glue_next = true;
    for (const auto& w : words) {
        bool glue = glue_next || w == "\n" || no_space_before(w);
        glue_next = w == "\n" || w == "(" || w == "=";
        if (is_quote(w)) {
            int& count = w == "\"" ? double_quotes : single_quotes;
            if (count % 2 == 1) glue = true;  // closing
            else glue_next = true;            // opening
            ++count;
        }
        if (!glue) out.push_back(' ');
        out += w;
    }
    return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
    std::vector<std::string> words;
    words.reserve(ids.size());
    for (int id : ids) words.push_back(vocab.token(id));
    return join_words(words);
}

std::string render(TemplateKind kind, const HistoryWindow& window) { return render_impl(kind, window, {}).text; }

std::string render_ablated(TemplateKind kind, const HistoryWindow& window, DropSet drop) {
    return render_impl(kind, window, drop).text;
}

PromptPlan plan_prompt(TemplateKind kind, const HistoryWindow& window, const Vocab& vocab, DropSet drop) {
    const Rendered r = render_impl(kind, window, drop);
    PromptPlan plan;
    plan.token_ids = tokenize(r.text, vocab);
    std::size_t next = 0;
    for (std::size_t pos = 0; pos < plan.token_ids.size(); ++pos) {
        const int t = plan.token_ids[pos];
        if (t != Vocab::kQSlot && t != Vocab::kCSlot) continue;
        if (next >= r.slots.size()) throw TemplateError("text contains a stray slot marker");
        const SlotRef& s = r.slots[next++];
        if ((t == Vocab::kQSlot) != (s.slot == SlotKind::Ques)) throw TemplateError("slot marker order mismatch");
        plan.bindings.push_back({pos, s.slot, s.history_index, s.entity_id});
    }
    if (next != r.slots.size()) throw TemplateError("slot markers lost during tokenization");
    plan.answer_position = plan.token_ids.size() - 1;
    return plan;
}

std::uint64_t vocab_hash(const Vocab& vocab) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < vocab.size(); ++i) {
        for (unsigned char c : vocab.token(static_cast<int>(i))) {
            h ^= c;
            h *= 1099511628211ull;
        }
        h ^= 0xff;
        h *= 1099511628211ull;
    }
    return h;
}

Vocab build_vocab(const data::Dataset& ds) {
    std::vector<std::string> texts;
    // Template words come from rendering every kind on a two-item dummy window.
    std::vector<Interaction> dummy(3);
    for (auto& it : dummy) {
        it.question_id = 0;
        it.concept_ids = {0};
        it.question_text = "x";
        it.concept_texts = {"y"};
    }
    dummy[0].correct = true;
    HistoryWindow w;
    w.history = std::span<const Interaction>(dummy.data(), 2);
    w.target = &dummy[2];
    for (auto k : {TemplateKind::Type1, TemplateKind::Type2, TemplateKind::Type3, TemplateKind::Type4,
                   TemplateKind::Type5})
        texts.push_back(render(k, w));

    std::size_t longest = 0;
    for (const auto& s : ds.students) longest = std::max(longest, s.interactions.size());
    const std::size_t numerals = std::max({static_cast<std::size_t>(ds.n_questions),
                                           static_cast<std::size_t>(ds.n_concepts), longest + 1});
    std::string nums;
    for (std::size_t i = 0; i < numerals; ++i) nums += std::to_string(i) + " ";
    texts.push_back(std::move(nums));

    std::set<std::string> seen;
    for (const auto& s : ds.students) {
        for (const auto& it : s.interactions) {
            if (it.question_text && seen.insert(*it.question_text).second) texts.push_back(*it.question_text);
            for (const auto& c : it.concept_texts)
                if (seen.insert(c).second) texts.push_back(c);
        }
    }
    return Vocab::build(texts);
}

}  // namespace llmkt::prompt
