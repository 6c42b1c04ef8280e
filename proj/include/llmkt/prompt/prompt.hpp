// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "llmkt/data/interaction.hpp"

namespace llmkt::prompt {

/// Raised when a window lacks a field the chosen template needs.
class TemplateError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class TemplateKind {
    Type1,  // question and concept ids
    Type2,  // question ids only
    Type3,  // concept ids only
    Type4,  // full question text, render-only
    Type5,  // concept text
};

TemplateKind parse_template_kind(std::string_view s);
std::string to_string(TemplateKind k);

/// Whether the dataset carries every field `kind` reads.
bool compatible(TemplateKind kind, const data::FieldAvailability& fields);
/// Type1 when both id kinds exist, otherwise Type2 or Type3.
TemplateKind default_kind(const data::FieldAvailability& fields);

/// Entities removed from every rendered item.
struct DropSet {
    bool question = false;
    bool concepts = false;
    bool empty() const { return !question && !concepts; }
};

enum class SlotKind { Ques, Conc };

struct SlotBinding {
    std::size_t position = 0;
    SlotKind slot = SlotKind::Ques;
    int history_index = -1;  // -1 for the target
    int entity_id = 0;
    bool is_target() const { return history_index < 0; }
};

struct PromptPlan {
    std::vector<int> token_ids;
    std::vector<SlotBinding> bindings;
    std::size_t answer_position = 0;
};

class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kQSlot = 2;
    static constexpr int kCSlot = 3;
    static constexpr int kYes = 4;
    static constexpr int kNo = 5;
    static constexpr int kReserved = 6;

    Vocab();

    /// Reserved tokens followed by every token of `texts` in sorted order.
    static Vocab build(const std::vector<std::string>& texts);

    int id(const std::string& token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

private:
    int add(const std::string& token);

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

inline constexpr std::string_view kQSlotMarker = "[QSLOT]";
inline constexpr std::string_view kCSlotMarker = "[CSLOT]";

/// Word-level segmentation: whitespace separates words, punctuation and
/// newlines are tokens of their own, slot markers stay whole.
std::vector<std::string> split_words(std::string_view text);
std::vector<int> tokenize(std::string_view text, const Vocab& vocab);
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);
std::string join_words(const std::vector<std::string>& words);

std::string render(TemplateKind kind, const data::HistoryWindow& window);
std::string render_ablated(TemplateKind kind, const data::HistoryWindow& window, DropSet drop);

PromptPlan plan_prompt(TemplateKind kind, const data::HistoryWindow& window, const Vocab& vocab,
                       DropSet drop = {});

/// FNV-1a over the token list in id order.
std::uint64_t vocab_hash(const Vocab& vocab);

/// Template words, numerals up to the dataset's id and length bounds, and
/// all question and concept texts.
Vocab build_vocab(const data::Dataset& ds);

}  // namespace llmkt::prompt
