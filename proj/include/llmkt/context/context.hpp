// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "llmkt/data/interaction.hpp"
#include "llmkt/numcore/checkpoint.hpp"
#include "llmkt/prompt/prompt.hpp"

namespace llmkt::context {

using numcore::Real;
using numcore::Tensor;

enum class TextSource { QText, CText };

struct ContextVec {
    std::vector<Real> values;
    TextSource source = TextSource::QText;
};

struct ContextConfig {
    int d_t = 64;
    int n_heads = 4;
    int d_ff = 128;
    bool frozen = false;  // keep encoder weights fixed during LLM-KT training
};

/// Token embedding over the prompt vocabulary, sinusoidal positions, one
/// pre-LN self-attention block with a feed-forward layer, mean pooling.
struct ContextEncoderModel {
    ContextConfig config;
    std::size_t vocab_size = 0;
    numcore::NamedTensors params;

    std::vector<Tensor> parameters() const;
    const Tensor& param(const std::string& name) const;
};

ContextEncoderModel init_context_encoder(const ContextConfig& config, std::size_t vocab_size, std::uint64_t seed);

/// Differentiable [texts, d_t] encoding of tokenised texts, packed into one
/// block-diagonal attention pass.
Tensor encode_token_lists(const ContextEncoderModel& model, const std::vector<std::vector<int>>& texts);

ContextVec encode_text(const ContextEncoderModel& model, const prompt::Vocab& vocab, const std::string& text,
                       TextSource source = TextSource::QText);

/// Question text and the "; "-joined concept texts of one interaction.
struct EntityTexts {
    std::optional<std::string> question;
    std::optional<std::string> concepts;
};

EntityTexts entity_texts(const data::Interaction& it);

struct ItemContext {
    std::optional<ContextVec> question;
    std::optional<ContextVec> concepts;
};

/// One entry per history item followed by the target.
std::vector<ItemContext> encode_entity_texts(const ContextEncoderModel& model, const prompt::Vocab& vocab,
                                             const data::HistoryWindow& window);

}  // namespace llmkt::context
