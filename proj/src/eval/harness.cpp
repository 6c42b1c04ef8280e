// SPDX-License-Identifier: Apache-2.0
#include "llmkt/eval/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "llmkt/eval/metrics.hpp"

namespace llmkt::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kInteractions = "interactions.csv";
constexpr const char* kSplit = "split.json";

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw UsageError("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void log_line(const Log& log, const std::string& s) {
    if (log) log(s);
}

seqkt::SeqKind seq_kind(lm::EncoderKind k) {
    return k == lm::EncoderKind::DKT ? seqkt::SeqKind::DKT : seqkt::SeqKind::AKTLite;
}

/// Sequence config with kind and entity counts resolved against the data.
seqkt::SeqConfig resolved_seq(const ExperimentConfig& c, const data::Dataset& ds) {
    seqkt::SeqConfig s = c.seq;
    s.kind = seq_kind(c.model.encoder);
    s.n_questions = ds.fields.question_ids ? ds.n_questions : 0;
    s.n_concepts = ds.fields.concept_ids ? ds.n_concepts : 0;
    return s;
}

json seq_json(const seqkt::SeqConfig& s, const seqkt::SeqTrainConfig& t) {
    return {{"d_s", s.d_s},           {"hidden", s.hidden},
            {"epochs", t.epochs},     {"batch_size", t.batch_size},
            {"lr", t.lr},             {"weight_decay", t.weight_decay},
            {"patience", t.patience}, {"max_len", t.max_len}};
}

json report_json(const seqkt::SeqTrainReport& r) {
    return {{"initial_loss", r.initial_loss}, {"train_loss", r.train_loss}, {"valid_auc", r.valid_auc},
            {"best_epoch", r.best_epoch},     {"best_valid_auc", r.best_valid_auc}};
}

seqkt::SeqTrainReport report_from_json(const json& j) {
    seqkt::SeqTrainReport r;
    r.initial_loss = j.at("initial_loss").get<double>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.valid_auc = j.at("valid_auc").get<std::vector<double>>();
    r.best_epoch = j.at("best_epoch").get<int>();
    r.best_valid_auc = j.at("best_valid_auc").get<double>();
    return r;
}

void write_json(const fs::path& p, const json& j) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << j.dump(2) << '\n';
}

}  // namespace

json to_json(const ExperimentConfig& c) {
    json j = lm::to_json(c.model);
    j["seq_encoder"] = seq_json(c.seq, c.seq_train);
    return j;
}

ExperimentConfig experiment_config_from_json(const json& j, ExperimentConfig c) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    json rest = j;
    if (rest.contains("seq_encoder")) {
        const json s = rest["seq_encoder"];
        rest.erase("seq_encoder");
        if (!s.is_object()) throw UsageError("config: seq_encoder must be an object");
        for (const auto& [k, v] : s.items()) {
            if (k == "d_s") c.seq.d_s = v.get<int>();
            else if (k == "hidden") c.seq.hidden = v.get<int>();
            else if (k == "epochs") c.seq_train.epochs = v.get<int>();
            else if (k == "batch_size") c.seq_train.batch_size = v.get<int>();
            else if (k == "lr") c.seq_train.lr = v.get<double>();
            else if (k == "weight_decay") c.seq_train.weight_decay = v.get<double>();
            else if (k == "patience") c.seq_train.patience = v.get<int>();
            else if (k == "max_len") c.seq_train.max_len = v.get<std::size_t>();
            else throw UsageError("config: unknown key seq_encoder." + k);
        }
        if (c.seq.d_s <= 0 || c.seq.hidden <= 0 || c.seq_train.epochs <= 0 || c.seq_train.batch_size <= 0 ||
            c.seq_train.max_len == 0)
            throw UsageError("config: seq_encoder sizes and epochs must be positive");
    }
    try {
        c.model = lm::config_from_json(rest, c.model);
    } catch (const numcore::ContractError& e) {
        throw UsageError(e.what());
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    if (!fs::exists(path)) throw UsageError("missing config file " + path.string());
    json j;
    try {
        j = json::parse(slurp(path));
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
    c.model.seed = seed;
    c.model.train.seed = seed;
    c.seq_train.seed = seed;
}

Fingerprint fingerprint(const ExperimentConfig& c, std::uint64_t data_hash) {
    Fingerprint f;
    const auto& m = c.model;
    f.fields = {{"template", prompt::to_string(m.template_kind)},
                {"merge", fusion::to_string(m.fusion.merge)},
                {"max_len", m.max_len},
                {"seed", m.seed},
                {"drop_question", m.drop.question},
                {"drop_concept", m.drop.concepts},
                {"use_context", m.fusion.use_context},
                {"use_sequence", m.fusion.use_sequence},
                {"encoder", lm::to_string(m.encoder)},
                {"data_hash", hex(data_hash)},
                {"config", to_json(c)}};
    f.id = hex(fnv1a(f.fields.dump()));
    return f;
}

json to_json(const MetricsReport& r) {
    json fp = r.fingerprint.fields;
    fp["id"] = r.fingerprint.id;
    return {{"auc", r.auc}, {"acc", r.acc}, {"n", r.n}, {"fingerprint", fp}};
}

MetricsReport score(std::span<const double> probs, const std::vector<bool>& labels, Fingerprint fp) {
    if (probs.empty()) throw UsageError("no examples to score");
    MetricsReport r;
    r.auc = auc(probs, labels);
    r.acc = acc(probs, labels);
    r.n = probs.size();
    r.fingerprint = std::move(fp);
    return r;
}

void write_metrics_json(const fs::path& path, const MetricsReport& r) { write_json(path, to_json(r)); }

double majority_acc(const std::vector<bool>& labels) {
    if (labels.empty()) throw UsageError("no labels");
    std::size_t pos = 0;
    for (bool y : labels) pos += y;
    return static_cast<double>(std::max(pos, labels.size() - pos)) / static_cast<double>(labels.size());
}

std::vector<data::HistoryWindow> PreparedData::windows(const std::string& part, std::size_t max_len) const {
    const std::vector<std::string>* ids = nullptr;
    if (part == "train") ids = &split.train;
    else if (part == "valid") ids = &split.valid;
    else if (part == "test") ids = &split.test;
    else throw UsageError("unknown split '" + part + "' (expected train, valid or test)");
    return data::window_histories(ds, *ids, max_len);
}

void write_prepared(const fs::path& dir, const std::vector<data::Interaction>& rows, std::uint64_t split_seed) {
    fs::create_directories(dir);
    const auto ds = data::Dataset::from_interactions(rows);
    data::write_native_csv(dir / kInteractions, rows);
    data::save_split(dir / kSplit, data::split_students(ds.student_ids(), split_seed));
}

PreparedData load_prepared(const fs::path& dir) {
    for (const char* f : {kInteractions, kSplit})
        if (!fs::exists(dir / f))
            throw UsageError("missing prepared data " + (dir / f).string() + " (run `prepare` first)");
    PreparedData d;
    d.dir = dir;
    auto loaded = data::load_csv(dir / kInteractions, data::SchemaKind::Native);
    d.ds = data::Dataset::from_interactions(loaded.interactions);
    d.split = data::load_split(dir / kSplit);
    d.vocab = prompt::build_vocab(d.ds);
    d.hash = fnv1a(slurp(dir / kSplit), fnv1a(slurp(dir / kInteractions)));
    return d;
}

seqkt::SeqTrainResult sequence_encoder(const PreparedData& data, const ExperimentConfig& c, const Log& log) {
    const auto sc = resolved_seq(c, data.ds);
    json key = seq_json(sc, c.seq_train);
    key["kind"] = seqkt::to_string(sc.kind);
    key["seed"] = c.seq_train.seed;
    key["data"] = hex(data.hash);
    const fs::path stem = data.cache_dir() / ("seq_" + hex(fnv1a(key.dump())));
    const fs::path report = fs::path(stem).concat(".report.json");
    if (fs::exists(report)) {
        log_line(log, "sequence encoder: cached " + stem.filename().string());
        return {seqkt::load_seq_model(stem), report_from_json(json::parse(slurp(report)))};
    }
    log_line(log, "sequence encoder: training " + seqkt::to_string(sc.kind));
    auto res = seqkt::train_seq_encoder(data.ds, data.split.train, data.split.valid, sc, c.seq_train);
    fs::create_directories(data.cache_dir());
    seqkt::save_seq_model(stem, res.model);
    write_json(report, report_json(res.report));
    log_line(log, "sequence encoder: best valid AUC " + std::to_string(res.report.best_valid_auc));
    return res;
}

lm::ToyLm base_model(const PreparedData& data, const ExperimentConfig& c, const Log& log) {
    lm::LmConfig lc = c.model.lm;
    lc.vocab_size = static_cast<int>(data.vocab.size());
    const auto& pc = c.model.pretrain;
    const json key = {{"lm", {lc.vocab_size, lc.d_e, lc.n_layers, lc.n_heads, lc.d_ff}},
                      {"pretrain", {pc.steps, pc.batch, pc.window, pc.lr, pc.seed}},
                      {"vocab", hex(prompt::vocab_hash(data.vocab))},
                      {"data", hex(data.hash)}};
    const fs::path path = data.cache_dir() / ("base_" + hex(fnv1a(key.dump())) + ".ckpt");
    lm::ToyLm base = lm::init_toy_lm(lc, pc.seed);
    if (fs::exists(path)) {
        log_line(log, "base LM: cached " + path.filename().string());
        numcore::assign_tensors(numcore::load_tensors(path), base.params);
    } else if (pc.steps > 0) {
        lm::LlmKtConfig canon = c.model;
        canon.template_kind = prompt::default_kind(data.ds.fields);
        canon.drop = {};
        canon.max_len = 100;
        const auto streams = lm::pretraining_streams(data.ds, data.split.train, canon, data.vocab);
        const auto [first, last] = lm::pretrain_lm(base, streams, pc);
        log_line(log, "base LM: pretrained, next-token loss " + std::to_string(first) + " -> " + std::to_string(last));
        fs::create_directories(data.cache_dir());
        numcore::save_tensors(path, base.params);
    }
    base.set_frozen(true);
    return base;
}

seqkt::IdEmbeddings id_embeddings(const PreparedData& data, const ExperimentConfig& c, const lm::ToyLm& base,
                                  const Log& log) {
    if (c.model.encoder == lm::EncoderKind::TokenInit)
        return lm::token_init_embeddings(base, data.vocab, data.ds.fields.question_ids ? data.ds.n_questions : 0,
                                         data.ds.fields.concept_ids ? data.ds.n_concepts : 0);
    std::vector<std::string> warnings;
    auto ids = seqkt::extract_id_embeddings(sequence_encoder(data, c, log).model, &warnings);
    for (const auto& w : warnings) log_line(log, "warning: " + w);
    return ids;
}

MetricsReport evaluate(const lm::LlmKtModel& model, const PreparedData& data, const std::string& part,
                       const Fingerprint& fp) {
    const auto wins = data.windows(part, model.config.max_len);
    if (wins.empty()) throw UsageError("split '" + part + "' has no prediction windows");
    const auto probs = lm::predict_windows(model, wins);
    std::vector<bool> labels;
    for (const auto& w : wins) labels.push_back(w.label);
    return score(probs, labels, fp);
}

RunResult train_and_evaluate(const PreparedData& data, const ExperimentConfig& c, const Log& log) {
    if (!prompt::compatible(c.model.template_kind, data.ds.fields))
        throw UsageError("template " + prompt::to_string(c.model.template_kind) +
                         " needs fields this dataset lacks; try " +
                         prompt::to_string(prompt::default_kind(data.ds.fields)));
    auto base = base_model(data, c, log);
    auto ids = id_embeddings(data, c, base, log);
    auto model = lm::init_llm_kt(c.model, data.vocab, std::move(base), std::move(ids));
    log_line(log, "LLM-KT: training " + std::to_string(c.model.train.epochs) + " epoch(s)");
    auto res = lm::train_llm_kt(std::move(model), data.ds, data.split.train, data.split.valid);
    for (std::size_t e = 0; e < res.report.train_loss.size(); ++e)
        log_line(log, "  epoch " + std::to_string(e + 1) + " loss " + std::to_string(res.report.train_loss[e]) +
                          " valid AUC " + std::to_string(res.report.valid_auc[e]));
    RunResult out{std::move(res.model), std::move(res.report), {}};
    out.test = evaluate(out.model, data, "test", fingerprint(c, data.hash));
    log_line(log, "LLM-KT: test AUC " + std::to_string(out.test.auc) + " ACC " + std::to_string(out.test.acc));
    return out;
}

std::vector<Variant> ablation_variants(const ExperimentConfig& base, const data::Dataset& ds,
                                       std::vector<std::string>* notices) {
    auto note = [&](const std::string& s) {
        if (notices) notices->push_back(s);
    };
    const bool both = ds.fields.question_ids && ds.fields.concept_ids;
    const auto& f = base.model.fusion;
    std::vector<Variant> out{{"full", base}};
    if (both) {
        Variant q{"-Question", base};
        q.config.model.drop.question = true;
        out.push_back(q);
        Variant k{"-Concept", base};
        k.config.model.drop.concepts = true;
        out.push_back(k);
    } else {
        note("skipped -Question and -Concept: the dataset does not carry both question and concept ids");
    }
    if (f.use_context && f.use_sequence) {
        Variant s{"-Sequence", base};
        s.config.model.fusion.use_sequence = false;
        out.push_back(s);
        Variant x{"-Context", base};
        x.config.model.fusion.use_context = false;
        out.push_back(x);
    } else {
        note("skipped -Sequence and -Context: the base config already runs a single branch");
    }
    return out;
}

std::vector<Variant> length_variants(const ExperimentConfig& base, std::span<const std::size_t> lengths) {
    std::vector<Variant> out;
    for (std::size_t L : lengths) {
        Variant v{std::to_string(L), base};
        v.config.model.max_len = L;
        out.push_back(v);
    }
    return out;
}

std::vector<Variant> merge_variants(const ExperimentConfig& base) {
    std::vector<Variant> out;
    for (auto g : {fusion::MergeKind::Concat, fusion::MergeKind::Avg, fusion::MergeKind::Add}) {
        Variant v{fusion::to_string(g), base};
        v.config.model.fusion.merge = g;
        out.push_back(v);
    }
    return out;
}

std::vector<TableRow> run_variants(const PreparedData& data, const std::vector<Variant>& variants, const Log& log,
                                   std::span<const TableRow> prior) {
    std::vector<TableRow> rows;
    std::map<std::string, MetricsReport> seen;
    for (const auto& r : prior) seen.emplace(r.report.fingerprint.id, r.report);
    for (const auto& v : variants) {
        const auto fp = fingerprint(v.config, data.hash);
        auto hit = seen.find(fp.id);
        if (hit != seen.end()) {
            log_line(log, "[" + v.name + "] same fingerprint as an earlier row; reusing its metrics");
            rows.push_back({v.name, hit->second});
            continue;
        }
        log_line(log, "[" + v.name + "] fingerprint " + fp.id);
        auto r = train_and_evaluate(data, v.config, log);
        seen.emplace(fp.id, r.test);
        rows.push_back({v.name, r.test});
    }
    return rows;
}

void write_table_csv(const fs::path& path, const std::string& key, const std::vector<TableRow>& rows) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << key << ",auc,acc,n\n";
    for (const auto& r : rows)
        os << r.name << ',' << json(r.report.auc).dump() << ',' << json(r.report.acc).dump() << ',' << r.report.n
           << '\n';
}

void write_merge_table_csv(const fs::path& path, const std::vector<std::pair<std::string, std::vector<TableRow>>>& sets) {
    if (sets.empty()) throw UsageError("merge table: no datasets");
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "merge";
    for (const auto& [name, rows] : sets) os << ',' << name << "_auc," << name << "_acc";
    os << ",average_auc,average_acc\n";
    const auto& first = sets.front().second;
    for (std::size_t i = 0; i < first.size(); ++i) {
        os << first[i].name;
        double sa = 0, sc = 0;
        for (const auto& [name, rows] : sets) {
            if (rows.size() != first.size() || rows[i].name != first[i].name)
                throw std::runtime_error("merge table: datasets ran different variants");
            os << ',' << json(rows[i].report.auc).dump() << ',' << json(rows[i].report.acc).dump();
            sa += rows[i].report.auc;
            sc += rows[i].report.acc;
        }
        const auto n = static_cast<double>(sets.size());
        os << ',' << json(sa / n).dump() << ',' << json(sc / n).dump() << '\n';
    }
}

}  // namespace llmkt::eval
