// SPDX-License-Identifier: Apache-2.0
#include "llmkt/fusion/fusion.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <random>
#include <tuple>

#include "llmkt/numcore/ops.hpp"

namespace llmkt::fusion {

using namespace numcore;

MergeKind parse_merge_kind(std::string_view s) {
    std::string t(s);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "add") return MergeKind::Add;
    if (t == "avg" || t == "average") return MergeKind::Avg;
    if (t == "concat") return MergeKind::Concat;
    throw ContractError("unknown merge function '" + std::string(s) + "' (expected add, avg or concat)");
}

std::string to_string(MergeKind k) {
    switch (k) {
        case MergeKind::Add: return "add";
        case MergeKind::Avg: return "avg";
        case MergeKind::Concat: return "concat";
    }
    return "?";
}

Adapter init_adapter(AdapterKind kind, int in_dim, int d_e, std::uint64_t seed) {
    if (in_dim <= 0 || d_e <= 0) throw ContractError("adapter needs positive sizes");
    Adapter a;
    a.kind = kind;
    a.in_dim = in_dim;
    a.d_e = d_e;
    std::mt19937_64 rng(seed);
    const auto i = static_cast<std::size_t>(in_dim), e = static_cast<std::size_t>(d_e);
    a.params["w1"] = randn({e, i}, 1.0 / std::sqrt(static_cast<Real>(i)), rng);
    a.params["b1"] = Tensor::zeros({e}, true);
    a.params["w2"] = randn({e, e}, 1.0 / std::sqrt(static_cast<Real>(e)), rng);
    a.params["b2"] = Tensor::zeros({e}, true);
    return a;
}

Tensor adapt(const Adapter& a, const Tensor& r) {
    if (r.shape().size() != 2 || r.shape()[1] != static_cast<std::size_t>(a.in_dim))
        throw ContractError("adapter expects [n, " + std::to_string(a.in_dim) + "], got " + shape_str(r.shape()));
    const auto& p = a.params;
    return linear(gelu(linear(r, p.at("w1"), p.at("b1"))), p.at("w2"), p.at("b2"));
}

namespace {

std::vector<Real> adapt_one(const Adapter& a, const std::vector<Real>& r) {
    NoGradGuard ng;
    Tensor out = adapt(a, Tensor::from({1, r.size()}, r));
    return {out.data().begin(), out.data().end()};
}

}  // namespace

std::vector<Real> adapt_context(const Adapter& a, const context::ContextVec& r) {
    if (a.kind != AdapterKind::Context) throw ContractError("adapt_context given a sequence adapter");
    return adapt_one(a, r.values);
}

std::vector<Real> adapt_sequence(const Adapter& a, const std::vector<Real>& r) {
    if (a.kind != AdapterKind::Sequence) throw ContractError("adapt_sequence given a context adapter");
    return adapt_one(a, r);
}

Tensor merge(MergeKind g, const Tensor& h_cont, const Tensor& h_seq, const Tensor& projection) {
    if (!h_cont && !h_seq) throw ContractError("merge needs at least one input");
    if (h_cont && h_seq && h_cont.shape() != h_seq.shape())
        throw ContractError("merge inputs differ in shape: " + shape_str(h_cont.shape()) + " vs " +
                            shape_str(h_seq.shape()));
    if (g == MergeKind::Concat) {
        if (!projection) throw ContractError("concat merge needs a projection");
        const Tensor& any = h_cont ? h_cont : h_seq;
        const Tensor zero = Tensor::zeros(any.shape());
        const Tensor both = concat_cols(h_cont ? h_cont : zero, h_seq ? h_seq : zero);
        if (both.shape()[1] != projection.shape()[1])
            throw ContractError("concat projection expects " + std::to_string(projection.shape()[1]) + " inputs");
        return linear(both, projection);
    }
    if (!h_cont) return h_seq;
    if (!h_seq) return h_cont;
    Tensor s = add(h_cont, h_seq);
    return g == MergeKind::Avg ? scale(s, 0.5) : s;
}

std::vector<Real> merge(MergeKind g, const std::optional<std::vector<Real>>& h_cont,
                        const std::optional<std::vector<Real>>& h_seq, const Tensor& projection) {
    NoGradGuard ng;
    auto row = [](const std::optional<std::vector<Real>>& v) {
        return v ? Tensor::from({1, v->size()}, *v) : Tensor{};
    };
    Tensor out = merge(g, row(h_cont), row(h_seq), projection);
    return {out.data().begin(), out.data().end()};
}

std::vector<Tensor> FusionModel::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : named()) out.push_back(v);
    return out;
}

NamedTensors FusionModel::named() const {
    NamedTensors out;
    if (config.use_context)
        for (const auto& [k, v] : context_adapter.params) out["ctx." + k] = v;
    if (config.use_sequence)
        for (const auto& [k, v] : sequence_adapter.params) out["seq." + k] = v;
    if (projection) out["concat.w"] = projection;
    return out;
}

FusionModel init_fusion(const FusionConfig& config, int d_t, int d_s, std::uint64_t seed) {
    if (!config.use_context && !config.use_sequence) throw ContractError("fusion needs at least one modality");
    FusionModel m;
    m.config = config;
    if (config.use_context) m.context_adapter = init_adapter(AdapterKind::Context, d_t, config.d_e, seed ^ 0xc0);
    if (config.use_sequence) m.sequence_adapter = init_adapter(AdapterKind::Sequence, d_s, config.d_e, seed ^ 0x5e);
    if (config.merge == MergeKind::Concat) {
        std::mt19937_64 rng(seed ^ 0xcc);
        const auto e = static_cast<std::size_t>(config.d_e);
        m.projection = randn({e, 2 * e}, 1.0 / std::sqrt(static_cast<Real>(2 * e)), rng);
    }
    return m;
}

namespace {

std::optional<std::string> slot_text(const data::Interaction& it, prompt::SlotKind slot, int entity) {
    if (slot == prompt::SlotKind::Ques) {
        if (it.question_text && !it.question_text->empty()) return *it.question_text;
        return std::nullopt;
    }
    if (it.concept_texts.empty()) return std::nullopt;
    auto pos = std::find(it.concept_ids.begin(), it.concept_ids.end(), entity);
    if (pos != it.concept_ids.end()) {
        const auto i = static_cast<std::size_t>(pos - it.concept_ids.begin());
        if (i < it.concept_texts.size() && !it.concept_texts[i].empty()) return it.concept_texts[i];
    }
    return context::entity_texts(it).concepts;
}

}  // namespace

std::vector<SlotRequest> slot_requests(const prompt::PromptPlan& plan, const data::HistoryWindow& w) {
    std::vector<SlotRequest> out;
    out.reserve(plan.bindings.size());
    for (const auto& b : plan.bindings) {
        const data::Interaction* it = nullptr;
        if (b.is_target()) {
            it = w.target;
        } else if (static_cast<std::size_t>(b.history_index) < w.history.size()) {
            it = &w.history[static_cast<std::size_t>(b.history_index)];
        }
        if (!it) throw ContractError("slot binding refers to a missing interaction");
        out.push_back({b.slot, b.entity_id, slot_text(*it, b.slot, b.entity_id)});
    }
    return out;
}

SlotBatch embed_slots(const FusionModel& model, const FusionSources& src, const std::vector<SlotRequest>& requests) {
    SlotBatch out;
    const auto d_e = static_cast<std::size_t>(model.config.d_e);
    if (requests.empty()) {
        out.vectors = Tensor::zeros({0, d_e});
        return out;
    }
    const bool ctx_on = model.config.use_context && src.encoder && src.vocab;
    const bool seq_on = model.config.use_sequence && src.ids;

    // Unique requests, then a gather back to request order.
    using Key = std::tuple<int, int, std::string, bool>;
    std::map<Key, int> unique_index;
    std::vector<const SlotRequest*> uniques;
    std::vector<int> to_unique;
    for (const auto& r : requests) {
        Key k{static_cast<int>(r.slot), r.entity_id, r.text.value_or(""), r.text.has_value()};
        auto [pos, fresh] = unique_index.emplace(k, static_cast<int>(uniques.size()));
        if (fresh) uniques.push_back(&r);
        to_unique.push_back(pos->second);
    }
    const std::size_t u = uniques.size();

    std::vector<bool> has_c(u, false), has_s(u, false);
    Tensor h_cont, h_seq;

    if (ctx_on) {
        std::map<std::string, int> text_index;
        std::vector<std::vector<int>> token_lists;
        std::vector<int> rows(u, -1);
        for (std::size_t i = 0; i < u; ++i) {
            if (!uniques[i]->text) continue;
            auto [pos, fresh] = text_index.emplace(*uniques[i]->text, static_cast<int>(token_lists.size()));
            if (fresh) {
                auto ids = prompt::tokenize(*uniques[i]->text, *src.vocab);
                if (ids.empty()) throw ContractError("slot text tokenizes to nothing");
                token_lists.push_back(std::move(ids));
            }
            rows[i] = pos->second;
            has_c[i] = true;
        }
        if (!token_lists.empty()) {
            Tensor h = adapt(model.context_adapter, context::encode_token_lists(*src.encoder, token_lists));
            const int zero_row = static_cast<int>(token_lists.size());
            h = concat_rows({h, Tensor::zeros({1, d_e})});
            for (auto& r : rows)
                if (r < 0) r = zero_row;
            h_cont = gather_rows(h, rows);
        }
    }

    if (seq_on) {
        const auto& ids = *src.ids;
        const auto d_s = static_cast<std::size_t>(ids.d_s);
        Buffer table;
        std::vector<int> rows(u, -1);
        int n = 0;
        for (std::size_t i = 0; i < u; ++i) {
            const auto& r = *uniques[i];
            const auto& bank = r.slot == prompt::SlotKind::Ques ? ids.questions : ids.concepts;
            if (r.entity_id < 0 || static_cast<std::size_t>(r.entity_id) >= bank.size()) continue;
            const auto& v = bank[static_cast<std::size_t>(r.entity_id)];
            if (v.size() != d_s) throw ContractError("id embedding width differs from d_s");
            table.insert(table.end(), v.begin(), v.end());
            rows[i] = n++;
            has_s[i] = true;
        }
        if (n > 0) {
            Tensor h = adapt(model.sequence_adapter, Tensor::from_buffer({static_cast<std::size_t>(n), d_s}, table));
            h = concat_rows({h, Tensor::zeros({1, d_e})});
            for (auto& r : rows)
                if (r < 0) r = n;
            h_seq = gather_rows(h, rows);
        }
    }

    for (std::size_t i = 0; i < u; ++i)
        if (!has_c[i] && !has_s[i])
            throw ContractError("slot for " + std::string(uniques[i]->slot == prompt::SlotKind::Ques ? "question" : "concept") +
                                " " + std::to_string(uniques[i]->entity_id) + " has neither text nor an id embedding");

    Tensor merged;
    const bool mixed = h_cont && h_seq &&
                       !(std::all_of(has_c.begin(), has_c.end(), [](bool b) { return b; }) &&
                         std::all_of(has_s.begin(), has_s.end(), [](bool b) { return b; }));
    if (mixed && model.config.merge != MergeKind::Concat) {
        // Rows missing one modality pass the other through unchanged.
        Buffer wc(u * d_e), ws(u * d_e);
        for (std::size_t i = 0; i < u; ++i) {
            const Real both = model.config.merge == MergeKind::Avg ? 0.5 : 1.0;
            const Real c = has_c[i] ? (has_s[i] ? both : 1.0) : 0.0;
            const Real s = has_s[i] ? (has_c[i] ? both : 1.0) : 0.0;
            std::fill_n(wc.begin() + static_cast<std::ptrdiff_t>(i * d_e), d_e, c);
            std::fill_n(ws.begin() + static_cast<std::ptrdiff_t>(i * d_e), d_e, s);
        }
        merged = add(mul(h_cont, Tensor::from_buffer({u, d_e}, std::move(wc))),
                     mul(h_seq, Tensor::from_buffer({u, d_e}, std::move(ws))));
    } else {
        merged = merge(model.config.merge, h_cont, h_seq, model.projection);
    }

    out.vectors = gather_rows(merged, to_unique);
    for (int k : to_unique) {
        out.has_context.push_back(has_c[static_cast<std::size_t>(k)]);
        out.has_sequence.push_back(has_s[static_cast<std::size_t>(k)]);
    }
    return out;
}

std::vector<FusedVec> build_slot_embeddings(const data::HistoryWindow& window, const prompt::PromptPlan& plan,
                                            const FusionModel& model, const FusionSources& sources) {
    NoGradGuard ng;
    auto requests = slot_requests(plan, window);
    auto batch = embed_slots(model, sources, requests);
    const auto d_e = static_cast<std::size_t>(model.config.d_e);
    std::vector<FusedVec> out;
    const auto data = batch.vectors.data();
    for (std::size_t i = 0; i < requests.size(); ++i) {
        FusedVec v;
        v.values.assign(data.begin() + static_cast<std::ptrdiff_t>(i * d_e),
                        data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d_e));
        v.entity = requests[i].slot;
        v.has_context = batch.has_context[i];
        v.has_sequence = batch.has_sequence[i];
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace llmkt::fusion
