// SPDX-License-Identifier: Apache-2.0
#include "llmkt/lm/lm.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "llmkt/numcore/ops.hpp"
#include "llmkt/numcore/optim.hpp"

namespace llmkt::lm {

using namespace numcore;

namespace {

std::string layer_name(int l, const std::string& part) { return "l" + std::to_string(l) + "." + part; }

const Tensor& get(const NamedTensors& p, const std::string& name) {
    auto it = p.find(name);
    if (it == p.end()) throw ContractError("missing parameter " + name);
    return it->second;
}

/// Blocks of at most `block` query rows covering [begin, end), each seeing
/// `prefix` plus the rows of its own run before it.
void causal_run(std::vector<AttentionBlock>& out, std::vector<KeyRange> prefix, std::size_t begin, std::size_t end,
                std::size_t block = 64) {
    for (std::size_t s = begin; s < end; s += block) {
        AttentionBlock b;
        b.query_begin = s;
        b.query_end = std::min(end, s + block);
        b.visible = prefix;
        if (s > begin) b.visible.push_back({begin, s});
        b.causal = true;
        b.causal_begin = s;
        out.push_back(std::move(b));
    }
}

struct Injected {
    std::span<const int> ids;
    std::span<const int> positions;
    std::span<const int> slot_rows;
    const Tensor* slots = nullptr;
};

Tensor embed(const ToyLm& lm, const Injected& in) {
    Tensor x = embedding(get(lm.params, "tok"), in.ids);
    if (!in.slot_rows.empty()) {
        if (!in.slots || !*in.slots || in.slots->rows() != in.slot_rows.size())
            throw ContractError("slot vectors do not match the slot rows");
        if (in.slots->cols() != static_cast<std::size_t>(lm.config.d_e))
            throw ContractError("slot vectors must have width d_e");
        x = replace_rows(x, in.slot_rows, *in.slots);
    }
    return x;
}

Tensor project(const ToyLm& lm, const Lora* lora, int l, const char* which, const Tensor& x, std::mt19937_64* rng) {
    const std::string w = layer_name(l, std::string("w") + which);
    if (lora) {
        auto a = lora->params.find(layer_name(l, std::string(which) + ".A"));
        if (a != lora->params.end()) {
            const Tensor& b = get(lora->params, layer_name(l, std::string(which) + ".B"));
            return lora_apply(x, get(lm.params, w), a->second, b, lora->config.scale(),
                              rng ? lora->config.dropout : 0.0, rng);
        }
    }
    return linear(x, get(lm.params, w));
}

/// One pre-LN block. With `query_rows`, only those rows are updated and
/// returned; keys and values still come from every row of x.
Tensor block(const ToyLm& lm, const Lora* lora, int l, const Tensor& x, std::span<const AttentionBlock> layout,
             std::span<const int> positions, std::span<const int> query_rows, std::mt19937_64* rng) {
    const auto& p = lm.params;
    Tensor a = layer_norm(x, get(p, layer_name(l, "ln1.g")), get(p, layer_name(l, "ln1.b")));
    const bool subset = !query_rows.empty();
    Tensor aq = subset ? gather_rows(a, query_rows) : a;
    Tensor q = project(lm, lora, l, "q", aq, rng);
    Tensor k = linear(a, get(p, layer_name(l, "wk")));
    Tensor v = project(lm, lora, l, "v", a, rng);
    const auto slopes = alibi_slopes(static_cast<std::size_t>(lm.config.n_heads));
    std::vector<int> query_pos;
    if (subset)
        for (int r : query_rows) query_pos.push_back(positions[static_cast<std::size_t>(r)]);
    const PositionBias bias{subset ? std::span<const int>(query_pos) : positions, positions, slopes};
    Tensor att = multi_head_attention(q, k, v, static_cast<std::size_t>(lm.config.n_heads), layout, &bias);
    Tensor h = add(subset ? gather_rows(x, query_rows) : x, linear(att, get(p, layer_name(l, "wo"))));
    Tensor f = layer_norm(h, get(p, layer_name(l, "ln2.g")), get(p, layer_name(l, "ln2.b")));
    f = linear(gelu(linear(f, get(p, layer_name(l, "ff1.w")), get(p, layer_name(l, "ff1.b")))),
               get(p, layer_name(l, "ff2.w")), get(p, layer_name(l, "ff2.b")));
    return add(h, f);
}

Tensor head(const ToyLm& lm, const Tensor& h) {
    const auto& p = lm.params;
    return linear(layer_norm(h, get(p, "lnf.g"), get(p, "lnf.b")), get(p, "head.w"), get(p, "head.b"));
}

Tensor run_all(const ToyLm& lm, const Lora* lora, const Injected& in, std::span<const AttentionBlock> layout,
               std::mt19937_64* rng) {
    Tensor x = embed(lm, in);
    for (int l = 0; l < lm.config.n_layers; ++l) x = block(lm, lora, l, x, layout, in.positions, {}, rng);
    return x;
}

}  // namespace

std::vector<Tensor> ToyLm::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : params) out.push_back(v);
    return out;
}

const Tensor& ToyLm::param(const std::string& name) const { return get(params, name); }

void ToyLm::set_frozen(bool frozen) {
    for (auto& [k, v] : params) v.set_requires_grad(!frozen);
}

ToyLm init_toy_lm(const LmConfig& c, std::uint64_t seed) {
    if (c.vocab_size <= prompt::Vocab::kReserved || c.d_e <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.d_ff <= 0 ||
        c.d_e % c.n_heads != 0)
        throw ContractError("language model needs a vocabulary and positive sizes with d_e divisible by n_heads");
    ToyLm lm;
    lm.config = c;
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(c.d_e), f = static_cast<std::size_t>(c.d_ff);
    const auto v = static_cast<std::size_t>(c.vocab_size);
    const Real sd = 1.0 / std::sqrt(static_cast<Real>(d));
    const Real resid = sd / std::sqrt(2.0 * c.n_layers);
    auto& p = lm.params;
    p["tok"] = randn({v, d}, 1.0, rng);
    for (int l = 0; l < c.n_layers; ++l) {
        p[layer_name(l, "ln1.g")] = Tensor::full({d}, 1.0, true);
        p[layer_name(l, "ln1.b")] = Tensor::zeros({d}, true);
        p[layer_name(l, "wq")] = randn({d, d}, sd, rng);
        p[layer_name(l, "wk")] = randn({d, d}, sd, rng);
        p[layer_name(l, "wv")] = randn({d, d}, sd, rng);
        p[layer_name(l, "wo")] = randn({d, d}, resid, rng);
        p[layer_name(l, "ln2.g")] = Tensor::full({d}, 1.0, true);
        p[layer_name(l, "ln2.b")] = Tensor::zeros({d}, true);
        p[layer_name(l, "ff1.w")] = randn({f, d}, sd, rng);
        p[layer_name(l, "ff1.b")] = Tensor::zeros({f}, true);
        p[layer_name(l, "ff2.w")] = randn({d, f}, 1.0 / std::sqrt(static_cast<Real>(f) * 2.0 * c.n_layers), rng);
        p[layer_name(l, "ff2.b")] = Tensor::zeros({d}, true);
    }
    p["lnf.g"] = Tensor::full({d}, 1.0, true);
    p["lnf.b"] = Tensor::zeros({d}, true);
    p["head.w"] = randn({v, d}, sd, rng);
    p["head.b"] = Tensor::zeros({v}, true);
    return lm;
}

std::vector<Tensor> Lora::parameters() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : params) out.push_back(v);
    return out;
}

std::size_t Lora::trainable_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : params) n += v.numel();
    return n;
}

Lora init_lora(const ToyLm& lm, const LoraConfig& config, std::uint64_t seed) {
    if (config.rank <= 0 || config.alpha <= 0 || config.dropout < 0 || config.dropout >= 1)
        throw ContractError("LoRA needs positive rank and alpha and dropout in [0,1)");
    Lora lora;
    lora.config = config;
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(lm.config.d_e), r = static_cast<std::size_t>(config.rank);
    for (int l = 0; l < lm.config.n_layers; ++l)
        for (const char* w : {"q", "v"}) {
            lora.params[layer_name(l, std::string(w) + ".A")] = randn({r, d}, 1.0 / std::sqrt(static_cast<Real>(d)), rng);
            lora.params[layer_name(l, std::string(w) + ".B")] = Tensor::zeros({d, r}, true);
        }
    return lora;
}

Tensor lora_apply(const Tensor& x, const Tensor& w, const Tensor& a, const Tensor& b, Real s, Real p,
                  std::mt19937_64* rng) {
    if (a.dim() != 2 || b.dim() != 2 || w.dim() != 2 || a.cols() != w.cols() || b.rows() != w.rows() ||
        b.cols() != a.rows())
        throw ContractError("LoRA shapes do not conform: W " + shape_str(w.shape()) + ", A " + shape_str(a.shape()) +
                            ", B " + shape_str(b.shape()));
    Tensor xd = x;
    if (p > 0.0) {
        if (!rng) throw ContractError("LoRA dropout needs a random engine");
        xd = dropout(x, p, *rng);
    }
    return add(linear(x, w), scale(linear(linear(xd, a), b), s));
}

PackedBatch pack_plans(std::span<const prompt::PromptPlan> plans, std::span<const std::vector<std::string>> slot_keys) {
    if (plans.empty()) throw ContractError("pack_plans: no plans");
    if (slot_keys.size() != plans.size()) throw ContractError("pack_plans: one key list per plan required");
    std::vector<std::map<std::size_t, const std::string*>> key_at(plans.size());
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto& pl = plans[i];
        if (pl.token_ids.empty() || pl.answer_position + 1 != pl.token_ids.size())
            throw ContractError("pack_plans: the answer must be the last token of each plan");
        if (slot_keys[i].size() != pl.bindings.size()) throw ContractError("pack_plans: slot key count mismatch");
        for (std::size_t b = 0; b < pl.bindings.size(); ++b) {
            if (pl.bindings[b].position >= pl.token_ids.size()) throw ContractError("pack_plans: slot out of range");
            key_at[i][pl.bindings[b].position] = &slot_keys[i][b];
        }
    }
    std::size_t trunk = 0;
    for (std::size_t i = 1; i < plans.size(); ++i)
        if (plans[i].token_ids.size() > plans[trunk].token_ids.size()) trunk = i;

    PackedBatch out;
    const auto& tp = plans[trunk];
    const std::size_t T = tp.token_ids.size();
    out.token_ids = tp.token_ids;
    for (std::size_t i = 0; i < T; ++i) out.positions.push_back(static_cast<int>(i));
    causal_run(out.layout, {}, 0, T);

    std::vector<std::size_t> offset(plans.size(), 0);
    for (std::size_t i = 1; i < plans.size(); ++i) offset[i] = offset[i - 1] + plans[i - 1].bindings.size();

    out.answer_rows.resize(plans.size());
    out.answer_layout.resize(plans.size());
    for (std::size_t b = 0; b < tp.bindings.size(); ++b) {
        out.slot_rows.push_back(static_cast<int>(tp.bindings[b].position));
        out.slot_source.push_back(static_cast<int>(offset[trunk] + b));
    }
    out.answer_rows[trunk] = static_cast<int>(T - 1);
    out.answer_layout[trunk] = {trunk, trunk + 1, {{0, T}}, false, 0};

    for (std::size_t i = 0; i < plans.size(); ++i) {
        if (i == trunk) continue;
        const auto& pl = plans[i];
        const std::size_t n = pl.token_ids.size();
        std::size_t lcp = 0;
        while (lcp < n && pl.token_ids[lcp] == tp.token_ids[lcp]) {
            auto a = key_at[i].find(lcp);
            auto b = key_at[trunk].find(lcp);
            const bool slot_a = a != key_at[i].end(), slot_b = b != key_at[trunk].end();
            if (slot_a != slot_b || (slot_a && *a->second != *b->second)) break;
            ++lcp;
        }
        if (lcp == n) {
            // Whole plan already lies on the trunk.
            out.answer_rows[i] = static_cast<int>(n - 1);
            out.answer_layout[i] = {i, i + 1, {{0, n}}, false, 0};
            continue;
        }
        const std::size_t start = out.token_ids.size();
        for (std::size_t t = lcp; t < n; ++t) {
            out.token_ids.push_back(pl.token_ids[t]);
            out.positions.push_back(static_cast<int>(t));
        }
        causal_run(out.layout, {{0, lcp}}, start, start + (n - lcp));
        for (std::size_t b = 0; b < pl.bindings.size(); ++b) {
            const std::size_t pos = pl.bindings[b].position;
            if (pos < lcp) continue;
            out.slot_rows.push_back(static_cast<int>(start + pos - lcp));
            out.slot_source.push_back(static_cast<int>(offset[i] + b));
        }
        const std::size_t ans = start + (n - 1 - lcp);
        out.answer_rows[i] = static_cast<int>(ans);
        std::vector<KeyRange> vis;
        if (lcp > 0) vis.push_back({0, lcp});
        vis.push_back({start, ans + 1});
        out.answer_layout[i] = {i, i + 1, std::move(vis), false, 0};
    }
    return out;
}

Tensor forward_answers(const ToyLm& lm, const Lora* lora, const PackedBatch& batch, const Tensor& slots,
                       std::mt19937_64* rng) {
    Injected in{batch.token_ids, batch.positions, batch.slot_rows, &slots};
    Tensor x = embed(lm, in);
    const int last = lm.config.n_layers - 1;
    for (int l = 0; l < last; ++l) x = block(lm, lora, l, x, batch.layout, batch.positions, {}, rng);
    x = block(lm, lora, last, x, batch.answer_layout, batch.positions, batch.answer_rows, rng);
    return head(lm, x);
}

Tensor forward_all(const ToyLm& lm, const Lora* lora, std::span<const int> token_ids,
                   std::span<const int> slot_positions, const Tensor& slots) {
    if (token_ids.empty()) throw ContractError("forward: empty sequence");
    for (int p : slot_positions)
        if (p < 0 || static_cast<std::size_t>(p) >= token_ids.size()) throw ContractError("forward: slot position out of range");
    std::vector<int> positions(token_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    std::vector<AttentionBlock> layout;
    causal_run(layout, {}, 0, token_ids.size());
    Injected in{token_ids, positions, slot_positions, &slots};
    return head(lm, run_all(lm, lora, in, layout, nullptr));
}

Tensor forward_injected(const ToyLm& lm, const Lora* lora, const prompt::PromptPlan& plan, const Tensor& slots) {
    const std::size_t n = plan.bindings.size();
    if ((n == 0 && slots && slots.rows() != 0) || (n > 0 && (!slots || slots.rows() != n)))
        throw ContractError("forward_injected: expected " + std::to_string(n) + " slot vectors");
    if (plan.answer_position >= plan.token_ids.size()) throw ContractError("forward_injected: answer position out of range");
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < n; ++i) keys.push_back(std::to_string(i));
    std::vector<prompt::PromptPlan> one{plan};
    one[0].token_ids.resize(plan.answer_position + 1);
    std::vector<std::vector<std::string>> k{keys};
    PackedBatch b = pack_plans(one, k);
    return forward_answers(lm, lora, b, n ? gather_rows(slots, b.slot_source) : Tensor{});
}

Real yes_probability(Real z_yes, Real z_no) {
    const Real m = std::max(z_yes, z_no);
    const Real ey = std::exp(z_yes - m), en = std::exp(z_no - m);
    return ey / (ey + en);
}

Real predict_prob(const ToyLm& lm, const Lora* lora, const prompt::PromptPlan& plan, const Tensor& slots) {
    NoGradGuard ng;
    Tensor z = forward_injected(lm, lora, plan, slots);
    return yes_probability(z.data()[prompt::Vocab::kYes], z.data()[prompt::Vocab::kNo]);
}

Tensor answer_loss(const Tensor& logits, const std::vector<bool>& labels) {
    if (logits.rows() != labels.size()) throw ContractError("answer_loss: one label per answer row required");
    std::vector<int> gold;
    for (bool y : labels) gold.push_back(y ? prompt::Vocab::kYes : prompt::Vocab::kNo);
    return cross_entropy(logits, gold);
}

std::pair<Real, Real> pretrain_lm(ToyLm& lm, const std::vector<std::vector<int>>& streams, const PretrainConfig& c) {
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < streams.size(); ++i)
        if (streams[i].size() >= 2) usable.push_back(i);
    if (usable.empty() || c.steps <= 0 || c.batch <= 0 || c.window < 2)
        throw ContractError("pretraining needs token streams and positive settings");
    lm.set_frozen(false);
    auto params = lm.parameters();
    auto state = OptimState::for_params(params, AdamConfig{0.9, 0.999, 1e-8, 0.0});
    std::mt19937_64 rng(c.seed);
    const int tenth = std::max(1, c.steps / 10);
    Real first = 0, last = 0;
    for (int step = 0; step < c.steps; ++step) {
        std::vector<int> ids, positions, rows, targets;
        std::vector<AttentionBlock> layout;
        for (int b = 0; b < c.batch; ++b) {
            const auto& s = streams[usable[rng() % usable.size()]];
            const std::size_t len = std::min<std::size_t>(s.size(), static_cast<std::size_t>(c.window));
            // Half of the windows end at the stream's last token.
            std::size_t from = 0;
            if (s.size() > len) from = rng() % 2 ? s.size() - len : rng() % (s.size() - len + 1);
            const std::size_t begin = ids.size();
            for (std::size_t t = 0; t < len; ++t) {
                ids.push_back(s[from + t]);
                positions.push_back(static_cast<int>(from + t));
                if (t + 1 < len) {
                    rows.push_back(static_cast<int>(begin + t));
                    targets.push_back(s[from + t + 1]);
                }
            }
            causal_run(layout, {}, begin, ids.size());
        }
        Injected in{ids, positions, {}, nullptr};
        Tensor h = run_all(lm, nullptr, in, layout, nullptr);
        Tensor loss = cross_entropy(head(lm, gather_rows(h, rows)), targets);
        const Real lv = loss.item();
        if (!std::isfinite(lv)) throw std::runtime_error("pretraining loss is not finite at step " + std::to_string(step));
        if (step < tenth) first += lv / tenth;
        if (step >= c.steps - tenth) last += lv / tenth;
        zero_grads(params);
        backward(loss);
        adam_step(state, params, cosine_lr(step, c.steps, c.lr));
    }
    lm.set_frozen(true);
    return {first, last};
}

}  // namespace llmkt::lm
