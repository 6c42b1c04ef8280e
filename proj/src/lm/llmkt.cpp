// SPDX-License-Identifier: Apache-2.0
#include "llmkt/lm/llmkt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "llmkt/eval/metrics.hpp"
#include "llmkt/numcore/ops.hpp"
#include "llmkt/numcore/optim.hpp"

namespace llmkt::lm {

using namespace numcore;
using nlohmann::json;

EncoderKind parse_encoder_kind(std::string_view s) {
    if (s == "dkt" || s == "DKT") return EncoderKind::DKT;
    if (s == "akt" || s == "akt-lite" || s == "AKT-lite") return EncoderKind::AKTLite;
    if (s == "token-init" || s == "token") return EncoderKind::TokenInit;
    throw ContractError("unknown encoder kind '" + std::string(s) + "' (expected dkt, akt-lite or token-init)");
}

std::string to_string(EncoderKind k) {
    switch (k) {
        case EncoderKind::DKT: return "dkt";
        case EncoderKind::AKTLite: return "akt-lite";
        case EncoderKind::TokenInit: return "token-init";
    }
    return "?";
}

json to_json(const LlmKtConfig& c) {
    json j;
    j["template"] = prompt::to_string(c.template_kind);
    j["drop"] = {{"question", c.drop.question}, {"concepts", c.drop.concepts}};
    j["max_len"] = c.max_len;
    j["encoder"] = to_string(c.encoder);
    j["lm"] = {{"d_e", c.lm.d_e}, {"n_layers", c.lm.n_layers}, {"n_heads", c.lm.n_heads}, {"d_ff", c.lm.d_ff}};
    j["lora"] = {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}, {"dropout", c.lora.dropout}};
    j["context"] = {{"d_t", c.context.d_t}, {"n_heads", c.context.n_heads}, {"d_ff", c.context.d_ff},
                    {"frozen", c.context.frozen}};
    j["fusion"] = {{"merge", fusion::to_string(c.fusion.merge)},
                   {"use_context", c.fusion.use_context},
                   {"use_sequence", c.fusion.use_sequence}};
    j["train"] = {{"epochs", c.train.epochs},         {"batch_size", c.train.batch_size},
                  {"grad_accum", c.train.grad_accum}, {"lr", c.train.lr},
                  {"weight_decay", c.train.weight_decay}, {"patience", c.train.patience},
                  {"seed", c.train.seed},             {"window_fraction", c.train.window_fraction}};
    j["pretrain"] = {{"steps", c.pretrain.steps}, {"batch", c.pretrain.batch}, {"window", c.pretrain.window},
                     {"lr", c.pretrain.lr}, {"seed", c.pretrain.seed}};
    j["seed"] = c.seed;
    return j;
}

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ContractError("config: '" + where + "' must be an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) throw ContractError("config: unknown key '" + where + (where.empty() ? "" : ".") + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

LlmKtConfig config_from_json(const json& j, LlmKtConfig c) {
    check_keys(j, "", {"template", "drop", "max_len", "encoder", "lm", "lora", "context", "fusion", "train", "pretrain",
                       "seed"});
    if (j.contains("template")) c.template_kind = prompt::parse_template_kind(j["template"].get<std::string>());
    if (j.contains("drop")) {
        check_keys(j["drop"], "drop", {"question", "concepts"});
        read(j["drop"], "question", c.drop.question);
        read(j["drop"], "concepts", c.drop.concepts);
    }
    read(j, "max_len", c.max_len);
    if (j.contains("encoder")) c.encoder = parse_encoder_kind(j["encoder"].get<std::string>());
    if (j.contains("lm")) {
        const auto& s = j["lm"];
        check_keys(s, "lm", {"d_e", "n_layers", "n_heads", "d_ff"});
        read(s, "d_e", c.lm.d_e);
        read(s, "n_layers", c.lm.n_layers);
        read(s, "n_heads", c.lm.n_heads);
        read(s, "d_ff", c.lm.d_ff);
    }
    if (j.contains("lora")) {
        const auto& s = j["lora"];
        if (s.is_string()) {
            if (s.get<std::string>() != "paper") throw ContractError("config: lora preset must be \"paper\"");
            c.lora = LoraConfig::paper();
        } else {
            check_keys(s, "lora", {"rank", "alpha", "dropout"});
            read(s, "rank", c.lora.rank);
            read(s, "alpha", c.lora.alpha);
            read(s, "dropout", c.lora.dropout);
        }
    }
    if (j.contains("context")) {
        const auto& s = j["context"];
        check_keys(s, "context", {"d_t", "n_heads", "d_ff", "frozen"});
        read(s, "d_t", c.context.d_t);
        read(s, "n_heads", c.context.n_heads);
        read(s, "d_ff", c.context.d_ff);
        read(s, "frozen", c.context.frozen);
    }
    if (j.contains("fusion")) {
        const auto& s = j["fusion"];
        check_keys(s, "fusion", {"merge", "use_context", "use_sequence"});
        if (s.contains("merge")) c.fusion.merge = fusion::parse_merge_kind(s["merge"].get<std::string>());
        read(s, "use_context", c.fusion.use_context);
        read(s, "use_sequence", c.fusion.use_sequence);
    }
    if (j.contains("train")) {
        const auto& s = j["train"];
        check_keys(s, "train", {"epochs", "batch_size", "grad_accum", "lr", "weight_decay", "patience", "seed",
                                "window_fraction"});
        read(s, "epochs", c.train.epochs);
        read(s, "batch_size", c.train.batch_size);
        read(s, "grad_accum", c.train.grad_accum);
        read(s, "lr", c.train.lr);
        read(s, "weight_decay", c.train.weight_decay);
        read(s, "patience", c.train.patience);
        read(s, "seed", c.train.seed);
        read(s, "window_fraction", c.train.window_fraction);
    }
    if (j.contains("pretrain")) {
        const auto& s = j["pretrain"];
        check_keys(s, "pretrain", {"steps", "batch", "window", "lr", "seed"});
        read(s, "steps", c.pretrain.steps);
        read(s, "batch", c.pretrain.batch);
        read(s, "window", c.pretrain.window);
        read(s, "lr", c.pretrain.lr);
        read(s, "seed", c.pretrain.seed);
    }
    read(j, "seed", c.seed);
    c.fusion.d_e = c.lm.d_e;
    const auto& t = c.train;
    if (t.epochs <= 0 || t.epochs > 10 || t.batch_size <= 0 || t.grad_accum <= 0 || t.lr <= 0 || t.weight_decay < 0 ||
        t.patience < 1 || t.window_fraction <= 0 || t.window_fraction > 1)
        throw ContractError("config: train needs 1..10 epochs, positive sizes and lr, patience >= 1");
    if (c.max_len == 0) throw ContractError("config: max_len must be positive");
    return c;
}

fusion::FusionSources LlmKtModel::sources() const {
    fusion::FusionSources s;
    if (config.fusion.use_context) {
        s.encoder = &encoder;
        s.vocab = &vocab;
    }
    if (config.fusion.use_sequence) s.ids = &ids;
    return s;
}

NamedTensors LlmKtModel::named_trainable() const {
    NamedTensors out;
    for (const auto& [k, v] : lora.params) out["lora." + k] = v;
    for (const auto& [k, v] : fusion.named()) out["fusion." + k] = v;
    if (config.fusion.use_context && !config.context.frozen)
        for (const auto& [k, v] : encoder.params) out["enc." + k] = v;
    return out;
}

std::vector<Tensor> LlmKtModel::trainable() const {
    std::vector<Tensor> out;
    for (const auto& [k, v] : named_trainable()) out.push_back(v);
    return out;
}

namespace {

NamedTensors id_tensors(const seqkt::IdEmbeddings& ids) {
    NamedTensors out;
    auto pack = [&](const std::vector<std::vector<Real>>& bank, const char* name) {
        const auto d = static_cast<std::size_t>(ids.d_s);
        std::vector<Real> flat;
        for (const auto& v : bank) flat.insert(flat.end(), v.begin(), v.end());
        out[name] = Tensor::from({bank.size(), d}, std::move(flat));
    };
    pack(ids.questions, "q");
    pack(ids.concepts, "c");
    return out;
}

std::vector<std::vector<Real>> unpack(const Tensor& t) {
    std::vector<std::vector<Real>> out;
    const std::size_t n = t.shape()[0], d = t.shape()[1];
    for (std::size_t i = 0; i < n; ++i)
        out.emplace_back(t.data().begin() + static_cast<std::ptrdiff_t>(i * d),
                         t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
    return out;
}

}  // namespace

std::uint64_t LlmKtModel::frozen_checksum() const {
    NamedTensors all;
    for (const auto& [k, v] : lm.params) all["lm." + k] = v;
    for (const auto& [k, v] : id_tensors(ids)) all["ids." + k] = v;
    if (config.context.frozen)
        for (const auto& [k, v] : encoder.params) all["enc." + k] = v;
    return checksum(all);
}

LlmKtModel init_llm_kt(const LlmKtConfig& config, const prompt::Vocab& vocab, ToyLm base, seqkt::IdEmbeddings ids) {
    if (static_cast<std::size_t>(base.config.vocab_size) != vocab.size())
        throw ContractError("base model vocabulary size differs from the prompt vocabulary");
    LlmKtModel m;
    m.config = config;
    m.config.lm = base.config;
    m.config.fusion.d_e = base.config.d_e;
    m.vocab = vocab;
    m.lm = std::move(base);
    m.lm.set_frozen(true);
    m.lora = init_lora(m.lm, config.lora, config.seed ^ 0x10a);
    m.encoder = context::init_context_encoder(config.context, vocab.size(), config.seed ^ 0xc7);
    if (config.context.frozen)
        for (auto& [k, v] : m.encoder.params) v.set_requires_grad(false);
    const int d_s = ids.d_s > 0 ? ids.d_s : 1;
    m.fusion = fusion::init_fusion(m.config.fusion, config.context.d_t, d_s, config.seed ^ 0xf5);
    m.ids = std::move(ids);
    return m;
}

seqkt::IdEmbeddings token_init_embeddings(const ToyLm& lm, const prompt::Vocab& vocab, int n_questions,
                                          int n_concepts) {
    seqkt::IdEmbeddings e;
    e.d_s = lm.config.d_e;
    const auto d = static_cast<std::size_t>(e.d_s);
    const auto tok = lm.param("tok").data();
    auto row = [&](int id) {
        const int t = vocab.id(std::to_string(id));
        if (t == prompt::Vocab::kUnk) throw ContractError("vocabulary lacks the numeral " + std::to_string(id));
        return std::vector<Real>(tok.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t) * d),
                                 tok.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(t + 1) * d));
    };
    for (int q = 0; q < n_questions; ++q) e.questions.push_back(row(q));
    for (int c = 0; c < n_concepts; ++c) e.concepts.push_back(row(c));
    return e;
}

std::vector<std::vector<int>> pretraining_streams(const data::Dataset& ds, const std::vector<std::string>& students,
                                                  const LlmKtConfig& config, const prompt::Vocab& vocab) {
    std::vector<std::vector<int>> out;
    std::mt19937_64 coin(config.pretrain.seed ^ 0xa115);
    for (const auto& id : students) {
        auto wins = data::window_histories(ds, ds.find_student(id), config.max_len);
        if (wins.empty()) continue;
        auto ids = prompt::plan_prompt(config.template_kind, wins.back(), vocab, config.drop).token_ids;
        ids.push_back(coin() % 2 ? prompt::Vocab::kYes : prompt::Vocab::kNo);
        out.push_back(std::move(ids));
    }
    return out;
}

namespace {

std::string slot_key(const fusion::SlotRequest& r) {
    std::string k = r.slot == prompt::SlotKind::Ques ? "Q" : "C";
    k += std::to_string(r.entity_id);
    if (r.text) k += "|" + *r.text;
    return k;
}

}  // namespace

std::vector<PreparedChunk> prepare_chunks(const LlmKtModel& model, std::span<const data::HistoryWindow> windows,
                                          std::size_t chunk_size) {
    if (chunk_size == 0) throw ContractError("chunk size must be positive");
    std::vector<PreparedChunk> out;
    std::size_t i = 0;
    while (i < windows.size()) {
        std::size_t j = i + 1;
        while (j < windows.size() && j - i < chunk_size && windows[j].student == windows[i].student) ++j;
        std::vector<prompt::PromptPlan> plans;
        std::vector<std::vector<std::string>> keys;
        std::vector<fusion::SlotRequest> flat;
        PreparedChunk c;
        for (std::size_t w = i; w < j; ++w) {
            plans.push_back(prompt::plan_prompt(model.config.template_kind, windows[w], model.vocab, model.config.drop));
            auto reqs = fusion::slot_requests(plans.back(), windows[w]);
            std::vector<std::string> k;
            for (auto& r : reqs) {
                k.push_back(slot_key(r));
                flat.push_back(std::move(r));
            }
            keys.push_back(std::move(k));
            c.labels.push_back(windows[w].label);
        }
        c.batch = pack_plans(plans, keys);
        for (int s : c.batch.slot_source) c.slots.push_back(flat[static_cast<std::size_t>(s)]);
        out.push_back(std::move(c));
        i = j;
    }
    return out;
}

Tensor chunk_logits(const LlmKtModel& model, const PreparedChunk& chunk, std::mt19937_64* rng) {
    Tensor slots;
    if (!chunk.slots.empty()) slots = fusion::embed_slots(model.fusion, model.sources(), chunk.slots).vectors;
    return forward_answers(model.lm, &model.lora, chunk.batch, slots, rng);
}

namespace {

std::vector<Real> chunk_probs(const LlmKtModel& model, const PreparedChunk& chunk) {
    NoGradGuard ng;
    Tensor z = chunk_logits(model, chunk);
    const std::size_t v = z.cols();
    std::vector<Real> p;
    for (std::size_t r = 0; r < z.rows(); ++r)
        p.push_back(yes_probability(z.data()[r * v + prompt::Vocab::kYes], z.data()[r * v + prompt::Vocab::kNo]));
    return p;
}

constexpr std::size_t kEvalChunk = 128;

std::vector<Real> predict_chunks(const LlmKtModel& model, const std::vector<PreparedChunk>& chunks) {
    std::vector<Real> out;
    for (const auto& c : chunks) {
        auto p = chunk_probs(model, c);
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

}  // namespace

std::vector<Real> predict_windows(const LlmKtModel& model, std::span<const data::HistoryWindow> windows) {
    return predict_chunks(model, prepare_chunks(model, windows, kEvalChunk));
}

TrainResult train_llm_kt(LlmKtModel model, const data::Dataset& ds, const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& valid_ids) {
    const auto start = std::chrono::steady_clock::now();
    const auto& tc = model.config.train;
    auto train_w = data::window_histories(ds, train_ids, model.config.max_len);
    auto valid_w = data::window_histories(ds, valid_ids, model.config.max_len);
    if (train_w.empty()) throw ContractError("LLM-KT training needs at least one training window");
    if (valid_w.empty()) throw ContractError("LLM-KT training needs at least one validation window");

    if (tc.window_fraction < 1.0) {
        // Keep whole batches: runs of up to batch_size windows of one student.
        std::vector<std::pair<std::size_t, std::size_t>> runs;
        for (std::size_t i = 0; i < train_w.size();) {
            std::size_t j = i + 1;
            while (j < train_w.size() && j - i < static_cast<std::size_t>(tc.batch_size) &&
                   train_w[j].student == train_w[i].student)
                ++j;
            runs.emplace_back(i, j);
            i = j;
        }
        std::mt19937_64 pick(tc.seed ^ 0xf1ac);
        std::shuffle(runs.begin(), runs.end(), pick);
        const auto keep = static_cast<std::size_t>(std::ceil(tc.window_fraction * static_cast<Real>(runs.size())));
        runs.resize(std::max<std::size_t>(1, keep));
        std::sort(runs.begin(), runs.end());
        std::vector<data::HistoryWindow> kept;
        for (auto [a, b] : runs) kept.insert(kept.end(), train_w.begin() + static_cast<std::ptrdiff_t>(a),
                                             train_w.begin() + static_cast<std::ptrdiff_t>(b));
        train_w = std::move(kept);
    }
    auto chunks = prepare_chunks(model, train_w, static_cast<std::size_t>(tc.batch_size));
    const auto valid_chunks = prepare_chunks(model, valid_w, kEvalChunk);
    std::vector<bool> valid_labels;
    for (const auto& w : valid_w) valid_labels.push_back(w.label);

    TrainResult res;
    auto& rep = res.report;
    for (const auto& c : chunks) rep.train_windows += c.labels.size();
    rep.frozen_before = model.frozen_checksum();

    auto params = model.trainable();
    auto state = OptimState::for_params(params, AdamConfig{0.9, 0.999, 1e-8, tc.weight_decay});
    const auto accum = static_cast<std::size_t>(tc.grad_accum);
    const std::int64_t steps_per_epoch = static_cast<std::int64_t>((chunks.size() + accum - 1) / accum);
    const std::int64_t total = steps_per_epoch * tc.epochs;
    std::mt19937_64 order_rng(tc.seed);
    std::mt19937_64 drop_rng(tc.seed ^ 0xd409);
    std::mt19937_64* rng = model.config.lora.dropout > 0 ? &drop_rng : nullptr;

    std::vector<std::vector<Real>> best;
    int since_best = 0;
    std::int64_t step = 0;
    std::vector<std::size_t> order(chunks.size());
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), order_rng);
        Real loss_sum = 0;
        zero_grads(params);
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto& c = chunks[order[i]];
            Tensor loss = answer_loss(chunk_logits(model, c, rng), c.labels);
            const Real lv = loss.item();
            if (!std::isfinite(lv))
                throw std::runtime_error("LLM-KT loss is not finite at epoch " + std::to_string(epoch + 1) + ", batch " +
                                         std::to_string(i) + " (" + std::to_string(c.labels.size()) + " windows, " +
                                         std::to_string(c.batch.token_ids.size()) + " packed tokens)");
            loss_sum += lv;
            backward(accum > 1 ? scale(loss, 1.0 / static_cast<Real>(accum)) : loss);
            if ((i + 1) % accum == 0 || i + 1 == order.size()) {
                adam_step(state, params, cosine_lr(step, total, tc.lr));
                zero_grads(params);
                ++step;
            }
        }
        rep.train_loss.push_back(loss_sum / static_cast<Real>(order.size()));
        const Real auc = eval::auc(predict_chunks(model, valid_chunks), valid_labels);
        rep.valid_auc.push_back(auc);
        if (rep.best_epoch < 0 || auc > rep.best_valid_auc) {
            rep.best_epoch = epoch + 1;
            rep.best_valid_auc = auc;
            best.clear();
            for (const auto& t : params) best.emplace_back(t.data().begin(), t.data().end());
            since_best = 0;
        } else if (++since_best >= tc.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto d = params[i].mutable_data();
        std::copy(best[i].begin(), best[i].end(), d.begin());
    }
    rep.frozen_after = model.frozen_checksum();
    if (rep.frozen_after != rep.frozen_before)
        throw std::runtime_error("a frozen tensor changed during LLM-KT training");
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.model = std::move(model);
    return res;
}

void write_training_curve_csv(const std::filesystem::path& path, const TrainReport& r) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "epoch,train_loss,valid_auc\n";
    os.precision(17);
    for (std::size_t i = 0; i < r.train_loss.size(); ++i)
        os << i + 1 << ',' << r.train_loss[i] << ',' << r.valid_auc[i] << '\n';
}

namespace {

NamedTensors all_tensors(const LlmKtModel& m) {
    NamedTensors all;
    for (const auto& [k, v] : m.lm.params) all["lm." + k] = v;
    for (const auto& [k, v] : m.lora.params) all["lora." + k] = v;
    for (const auto& [k, v] : m.encoder.params) all["enc." + k] = v;
    for (const auto& [k, v] : m.fusion.named()) all["fusion." + k] = v;
    for (const auto& [k, v] : id_tensors(m.ids)) all["ids." + k] = v;
    return all;
}

}  // namespace

void save_llm_kt(const std::filesystem::path& stem, const LlmKtModel& m) {
    const auto all = all_tensors(m);
    save_tensors(std::filesystem::path(stem).concat(".ckpt"), all);
    nlohmann::ordered_json j;
    j["architecture"] = to_json(m.config);
    j["lora"] = {{"rank", m.lora.config.rank}, {"alpha", m.lora.config.alpha}, {"dropout", m.lora.config.dropout},
                 {"targets", {"q", "v"}}};
    j["vocab_hash"] = prompt::vocab_hash(m.vocab);
    j["vocab_size"] = m.vocab.size();
    j["seed"] = m.config.seed;
    j["ids"] = {{"d_s", m.ids.d_s}, {"n_questions", m.ids.questions.size()}, {"n_concepts", m.ids.concepts.size()}};
    j["checksum"] = checksum(all);
    std::ofstream os(std::filesystem::path(stem).concat(".json"), std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest for " + stem.string());
    os << j.dump(2) << '\n';
}

LlmKtModel load_llm_kt(const std::filesystem::path& stem, const prompt::Vocab& vocab) {
    const auto manifest = std::filesystem::path(stem).concat(".json");
    std::ifstream is(manifest, std::ios::binary);
    if (!is) throw std::runtime_error("missing checkpoint manifest " + manifest.string());
    const auto j = json::parse(is);
    if (j.at("vocab_hash").get<std::uint64_t>() != prompt::vocab_hash(vocab))
        throw std::runtime_error("vocabulary hash mismatch between checkpoint " + stem.string() + " and the data");
    const LlmKtConfig config = config_from_json(j.at("architecture"));
    LmConfig lc = config.lm;
    lc.vocab_size = static_cast<int>(vocab.size());
    seqkt::IdEmbeddings ids;
    ids.d_s = j.at("ids").at("d_s").get<int>();
    ids.questions.assign(j["ids"]["n_questions"].get<std::size_t>(), std::vector<Real>(static_cast<std::size_t>(ids.d_s)));
    ids.concepts.assign(j["ids"]["n_concepts"].get<std::size_t>(), std::vector<Real>(static_cast<std::size_t>(ids.d_s)));
    LlmKtModel m = init_llm_kt(config, vocab, init_toy_lm(lc, 0), std::move(ids));
    const auto loaded = load_tensors(std::filesystem::path(stem).concat(".ckpt"));
    auto dst = all_tensors(m);
    assign_tensors(loaded, dst);
    m.ids.questions = unpack(dst.at("ids.q"));
    m.ids.concepts = unpack(dst.at("ids.c"));
    if (j.at("checksum").get<std::uint64_t>() != checksum(all_tensors(m)))
        throw std::runtime_error("checkpoint checksum mismatch for " + stem.string());
    return m;
}

}  // namespace llmkt::lm
