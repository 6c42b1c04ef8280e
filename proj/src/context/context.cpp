// SPDX-License-Identifier: Apache-2.0
#include "llmkt/context/context.hpp"

#include <cmath>
#include <random>

#include "llmkt/numcore/attention.hpp"
#include "llmkt/numcore/ops.hpp"

namespace llmkt::context {

using namespace numcore;

std::vector<Tensor> ContextEncoderModel::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : params) out.push_back(v);
    return out;
}

const Tensor& ContextEncoderModel::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("context encoder has no parameter " + name);
    return it->second;
}

ContextEncoderModel init_context_encoder(const ContextConfig& config, std::size_t vocab_size, std::uint64_t seed) {
    if (config.d_t <= 0 || config.n_heads <= 0 || config.d_ff <= 0 || config.d_t % config.n_heads != 0)
        throw ContractError("context encoder needs positive sizes with d_t divisible by n_heads");
    if (vocab_size == 0) throw ContractError("context encoder needs a vocabulary");
    ContextEncoderModel m;
    m.config = config;
    m.vocab_size = vocab_size;
    std::mt19937_64 rng(seed);
    const std::size_t d = static_cast<std::size_t>(config.d_t), f = static_cast<std::size_t>(config.d_ff);
    const Real sd = 1.0 / std::sqrt(static_cast<Real>(d));
    auto& p = m.params;
    p["tok"] = randn({vocab_size, d}, 0.5, rng);
    p["ln1.g"] = Tensor::full({d}, 1.0, true);
    p["ln1.b"] = Tensor::zeros({d}, true);
    p["wq"] = randn({d, d}, sd, rng);
    p["wk"] = randn({d, d}, sd, rng);
    p["wv"] = randn({d, d}, sd, rng);
    p["wo"] = randn({d, d}, sd, rng);
    p["ln2.g"] = Tensor::full({d}, 1.0, true);
    p["ln2.b"] = Tensor::zeros({d}, true);
    p["ff1.w"] = randn({f, d}, sd, rng);
    p["ff1.b"] = Tensor::zeros({f}, true);
    p["ff2.w"] = randn({d, f}, 1.0 / std::sqrt(static_cast<Real>(f)), rng);
    p["ff2.b"] = Tensor::zeros({d}, true);
    return m;
}

Tensor encode_token_lists(const ContextEncoderModel& m, const std::vector<std::vector<int>>& texts) {
    if (texts.empty()) throw ContractError("encode: no texts");
    std::vector<int> ids, positions;
    std::vector<std::vector<int>> groups;
    std::vector<AttentionBlock> layout;
    for (const auto& t : texts) {
        if (t.empty()) throw ContractError("encode: empty text");
        const std::size_t begin = ids.size();
        std::vector<int> rows;
        for (std::size_t i = 0; i < t.size(); ++i) {
            rows.push_back(static_cast<int>(ids.size()));
            ids.push_back(t[i]);
            positions.push_back(static_cast<int>(i));
        }
        groups.push_back(std::move(rows));
        layout.push_back(full_block(begin, ids.size()));
    }
    const std::size_t d = static_cast<std::size_t>(m.config.d_t);
    Tensor x = add(embedding(m.param("tok"), ids), sinusoidal_encoding(positions, d));
    Tensor a = layer_norm(x, m.param("ln1.g"), m.param("ln1.b"));
    Tensor att = multi_head_attention(linear(a, m.param("wq")), linear(a, m.param("wk")), linear(a, m.param("wv")),
                                      static_cast<std::size_t>(m.config.n_heads), layout);
    x = add(x, linear(att, m.param("wo")));
    Tensor b = layer_norm(x, m.param("ln2.g"), m.param("ln2.b"));
    x = add(x, linear(gelu(linear(b, m.param("ff1.w"), m.param("ff1.b"))), m.param("ff2.w"), m.param("ff2.b")));
    return matmul(averaging_matrix(groups, ids.size()), x);
}

ContextVec encode_text(const ContextEncoderModel& m, const prompt::Vocab& vocab, const std::string& text,
                       TextSource source) {
    auto ids = prompt::tokenize(text, vocab);
    if (ids.empty()) throw ContractError("encode_text: empty text");
    NoGradGuard ng;
    Tensor out = encode_token_lists(m, {ids});
    return {std::vector<Real>(out.data().begin(), out.data().end()), source};
}

EntityTexts entity_texts(const data::Interaction& it) {
    EntityTexts out;
    if (it.question_text && !it.question_text->empty()) out.question = *it.question_text;
    if (!it.concept_texts.empty()) {
        std::string joined;
        for (std::size_t i = 0; i < it.concept_texts.size(); ++i) {
            if (i) joined += "; ";
            joined += it.concept_texts[i];
        }
        out.concepts = std::move(joined);
    }
    return out;
}

std::vector<ItemContext> encode_entity_texts(const ContextEncoderModel& m, const prompt::Vocab& vocab,
                                             const data::HistoryWindow& w) {
    std::vector<ItemContext> out;
    auto one = [&](const data::Interaction& it) {
        const auto t = entity_texts(it);
        ItemContext c;
        if (t.question) c.question = encode_text(m, vocab, *t.question, TextSource::QText);
        if (t.concepts) c.concepts = encode_text(m, vocab, *t.concepts, TextSource::CText);
        out.push_back(std::move(c));
    };
    for (const auto& it : w.history) one(it);
    if (w.target) one(*w.target);
    return out;
}

}  // namespace llmkt::context
