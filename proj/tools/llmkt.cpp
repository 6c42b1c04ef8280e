// SPDX-License-Identifier: Apache-2.0
// Command-line front end: synth, prepare, train-seq, train, eval, ablate,
// sweep-length, sweep-merge. Exit codes: 0 ok, 1 usage or input error,
// 2 runtime failure.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "llmkt/data/synth.hpp"
#include "llmkt/eval/harness.hpp"

namespace fs = std::filesystem;
using namespace llmkt;
using eval::UsageError;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* sc, Common& c) {
    sc->add_option("--config", c.config, "JSON config file");
    sc->add_option("--seed", c.seed, "Seed override");
    sc->add_option("--out", c.out, "Output directory")->required();
}

eval::ExperimentConfig experiment(const Common& c) {
    auto cfg = c.config.empty() ? eval::ExperimentConfig{} : eval::load_experiment_config(c.config);
    if (c.seed) eval::apply_seed(cfg, *c.seed);
    return cfg;
}

void log(const std::string& s) { std::cerr << s << '\n'; }

json read_json(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw UsageError("cannot read " + p.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw UsageError(p.string() + " is not valid JSON: " + e.what());
    }
}

void write_text(const fs::path& p, const std::string& s) {
    fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << s;
}

void print_metrics(const std::string& what, const eval::MetricsReport& r) {
    std::printf("%s: auc %.4f acc %.4f n %zu (fingerprint %s)\n", what.c_str(), r.auc, r.acc, r.n,
                r.fingerprint.id.c_str());
}

int cmd_synth(const Common& c, std::optional<int> students, std::optional<int> questions,
              std::optional<int> concepts, std::optional<int> length) {
    data::SynthSpec spec;
    if (!c.config.empty()) {
        for (const auto& [k, v] : read_json(c.config).items()) {
            if (k == "n_students") spec.n_students = v.get<int>();
            else if (k == "n_questions") spec.n_questions = v.get<int>();
            else if (k == "n_concepts") spec.n_concepts = v.get<int>();
            else if (k == "interactions_per_student") spec.interactions_per_student = v.get<int>();
            else if (k == "learning_rate") spec.learning_rate = v.get<double>();
            else if (k == "seed") spec.seed = v.get<std::uint64_t>();
            else throw UsageError("synth config: unknown key " + k);
        }
    }
    if (c.seed) spec.seed = *c.seed;
    if (students) spec.n_students = *students;
    if (questions) spec.n_questions = *questions;
    if (concepts) spec.n_concepts = *concepts;
    if (length) spec.interactions_per_student = *length;
    if (spec.n_students < 1 || spec.n_questions < 1 || spec.n_concepts < 1 || spec.interactions_per_student < 2)
        throw UsageError("synth: counts must be positive and students need at least 2 interactions");
    const auto res = data::synth_generate(spec);
    const fs::path out(c.out);
    fs::create_directories(out);
    data::write_native_csv(out / "interactions.csv", res.interactions);
    data::write_oracle_csv(out / "oracle.csv", res);
    std::printf("wrote %zu interactions of %d students to %s\n", res.interactions.size(), spec.n_students,
                (out / "interactions.csv").string().c_str());
    return 0;
}

int cmd_prepare(const Common& c, const std::string& input, const std::string& schema) {
    const fs::path out(c.out);
    const fs::path in = input.empty() ? out / "interactions.csv" : fs::path(input);
    if (!fs::exists(in)) throw UsageError("missing input " + in.string() + " (run `synth` or pass --input)");
    const auto cfg = experiment({c.config, {}, c.out});
    auto loaded = data::load_csv(in, data::parse_schema_kind(schema));
    for (const auto& w : loaded.warnings) log("warning: " + w);
    if (loaded.dropped) log("dropped " + std::to_string(loaded.dropped) + " rows");
    eval::write_prepared(out, loaded.interactions, c.seed.value_or(42));
    const auto data = eval::load_prepared(out);
    json summary = {{"students", data.ds.students.size()},
                    {"interactions", data.ds.interaction_count()},
                    {"n_questions", data.ds.n_questions},
                    {"n_concepts", data.ds.n_concepts},
                    {"split_seed", data.split.seed},
                    {"max_len", cfg.model.max_len}};
    for (const char* part : {"train", "valid", "test"}) {
        const auto n = data.windows(part, cfg.model.max_len).size();
        summary["windows"][part] = n;
    }
    write_text(out / "prepare.json", summary.dump(2) + "\n");
    std::printf("prepared %s: %zu students, split %zu/%zu/%zu\n", out.string().c_str(), data.ds.students.size(),
                data.split.train.size(), data.split.valid.size(), data.split.test.size());
    return 0;
}

int cmd_train_seq(const Common& c, const std::string& data_dir) {
    const auto cfg = experiment(c);
    if (cfg.model.encoder == lm::EncoderKind::TokenInit)
        throw UsageError("train-seq: the token-init encoder has no sequence model to train");
    const auto data = eval::load_prepared(data_dir);
    auto res = eval::sequence_encoder(data, cfg, log);
    const fs::path out(c.out);
    fs::create_directories(out);
    seqkt::save_seq_model(out / "seq", res.model);
    seqkt::write_embeddings_csv(out / "embeddings.csv", seqkt::extract_id_embeddings(res.model));
    const auto wins = data.windows("test", cfg.seq_train.max_len);
    const auto probs = seqkt::predict_windows(res.model, data.ds, wins);
    std::vector<bool> labels;
    for (const auto& w : wins) labels.push_back(w.label);
    auto report = eval::score(probs, labels, eval::fingerprint(cfg, data.hash));
    eval::write_metrics_json(out / "metrics.json", report);
    print_metrics(seqkt::to_string(res.model.config.kind) + " test", report);
    return 0;
}

int cmd_train(const Common& c, const std::string& data_dir) {
    const auto cfg = experiment(c);
    const auto data = eval::load_prepared(data_dir);
    auto r = eval::train_and_evaluate(data, cfg, log);
    const fs::path out(c.out);
    fs::create_directories(out);
    lm::save_llm_kt(out / "model", r.model);
    write_text(out / "model.experiment.json", eval::to_json(cfg).dump(2) + "\n");
    lm::write_training_curve_csv(out / "curve.csv", r.train);
    eval::write_metrics_json(out / "metrics.json", r.test);
    std::vector<bool> labels;
    for (const auto& w : data.windows("test", cfg.model.max_len)) labels.push_back(w.label);
    print_metrics("LLM-KT test", r.test);
    std::printf("majority-class ACC %.4f, best epoch %d, %.1f s\n", eval::majority_acc(labels), r.train.best_epoch,
                r.train.seconds);
    return 0;
}

int cmd_eval(const Common& c, const std::string& data_dir, const std::string& checkpoint, const std::string& part) {
    const fs::path stem = checkpoint.empty() ? fs::path(c.out) / "model" : fs::path(checkpoint);
    const fs::path manifest = fs::path(stem).concat(".json");
    if (!fs::exists(manifest) || !fs::exists(fs::path(stem).concat(".ckpt")))
        throw UsageError("missing checkpoint " + manifest.string() + " (run `train` first or pass --checkpoint)");
    const auto data = eval::load_prepared(data_dir);
    lm::LlmKtModel model;
    try {
        model = lm::load_llm_kt(stem, data.vocab);
    } catch (const std::runtime_error& e) {
        throw UsageError(e.what());
    }
    eval::ExperimentConfig cfg;
    const fs::path exp = fs::path(stem).concat(".experiment.json");
    if (fs::exists(exp)) cfg = eval::experiment_config_from_json(read_json(exp));
    cfg.model = model.config;
    auto report = eval::evaluate(model, data, part, eval::fingerprint(cfg, data.hash));
    fs::create_directories(c.out);
    eval::write_metrics_json(fs::path(c.out) / "metrics.json", report);
    print_metrics("LLM-KT " + part, report);
    return 0;
}

void write_rows_json(const fs::path& p, const std::vector<eval::TableRow>& rows) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back({{"name", r.name}, {"metrics", eval::to_json(r.report)}});
    write_text(p, arr.dump(2) + "\n");
}

void print_rows(const std::vector<eval::TableRow>& rows) {
    for (const auto& r : rows) print_metrics(r.name, r.report);
}

int cmd_ablate(const Common& c, const std::string& data_dir) {
    const auto cfg = experiment(c);
    const auto data = eval::load_prepared(data_dir);
    std::vector<std::string> notices;
    const auto variants = eval::ablation_variants(cfg, data.ds, &notices);
    for (const auto& n : notices) log("notice: " + n);
    const auto rows = eval::run_variants(data, variants, log);
    eval::write_table_csv(fs::path(c.out) / "ablation.csv", "variant", rows);
    write_rows_json(fs::path(c.out) / "ablation.json", rows);
    print_rows(rows);
    return 0;
}

int cmd_sweep_length(const Common& c, const std::string& data_dir, const std::vector<std::size_t>& lengths) {
    if (lengths.empty()) throw UsageError("sweep-length: no lengths");
    const auto cfg = experiment(c);
    const auto data = eval::load_prepared(data_dir);
    const auto rows = eval::run_variants(data, eval::length_variants(cfg, lengths), log);
    eval::write_table_csv(fs::path(c.out) / "sweep_length.csv", "L", rows);
    write_rows_json(fs::path(c.out) / "sweep_length.json", rows);
    print_rows(rows);
    return 0;
}

int cmd_sweep_merge(const Common& c, const std::vector<std::string>& data_dirs) {
    const auto cfg = experiment(c);
    std::vector<std::pair<std::string, std::vector<eval::TableRow>>> sets;
    for (const auto& d : data_dirs) {
        const auto data = eval::load_prepared(d);
        auto rows = eval::run_variants(data, eval::merge_variants(cfg), log);
        std::string name = fs::path(d).lexically_normal().filename().string();
        if (name.empty()) name = fs::path(d).lexically_normal().parent_path().filename().string();
        if (data_dirs.size() == 1) {
            eval::write_table_csv(fs::path(c.out) / "sweep_merge.csv", "merge", rows);
            write_rows_json(fs::path(c.out) / "sweep_merge.json", rows);
        }
        print_rows(rows);
        sets.emplace_back(name.empty() ? "data" : name, std::move(rows));
    }
    eval::write_merge_table_csv(fs::path(c.out) / "sweep_merge_table.csv", sets);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LLM-KT knowledge tracing at desk scale"};
    app.require_subcommand(1);

    Common synth_c, prep_c, seq_c, train_c, eval_c, abl_c, len_c, merge_c;
    std::optional<int> students, questions, concepts, length;
    std::string input, schema = "native", data_dir, checkpoint, part = "test";
    std::vector<std::string> merge_dirs;
    std::vector<std::size_t> lengths{20, 50, 100};

    auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset with oracle probabilities");
    add_common(synth, synth_c);
    synth->add_option("--students", students);
    synth->add_option("--questions", questions);
    synth->add_option("--concepts", concepts);
    synth->add_option("--length", length, "Interactions per student");

    auto* prepare = app.add_subcommand("prepare", "Load a log, split students 8:1:1 and write a data directory");
    add_common(prepare, prep_c);
    prepare->add_option("--input", input, "Interaction CSV (default: <out>/interactions.csv)");
    prepare->add_option("--schema", schema, "native, assist, junyi or nips");

    auto* train_seq = app.add_subcommand("train-seq", "Train the sequence encoder (DKT or AKT-lite)");
    add_common(train_seq, seq_c);
    train_seq->add_option("--data", data_dir, "Prepared data directory")->required();

    auto* train = app.add_subcommand("train", "Train and test LLM-KT");
    add_common(train, train_c);
    train->add_option("--data", data_dir, "Prepared data directory")->required();

    auto* evalc = app.add_subcommand("eval", "Score a trained checkpoint");
    add_common(evalc, eval_c);
    evalc->add_option("--data", data_dir, "Prepared data directory")->required();
    evalc->add_option("--checkpoint", checkpoint, "Checkpoint stem (default: <out>/model)");
    evalc->add_option("--split", part, "train, valid or test");

    auto* ablate = app.add_subcommand("ablate", "Full model and the four ablations");
    add_common(ablate, abl_c);
    ablate->add_option("--data", data_dir, "Prepared data directory")->required();

    auto* sweep_len = app.add_subcommand("sweep-length", "History length sweep");
    add_common(sweep_len, len_c);
    sweep_len->add_option("--data", data_dir, "Prepared data directory")->required();
    sweep_len->add_option("--lengths", lengths, "History lengths")->delimiter(',');

    auto* sweep_merge = app.add_subcommand("sweep-merge", "Add, Avg and Concat merge functions");
    add_common(sweep_merge, merge_c);
    sweep_merge->add_option("--data", merge_dirs, "Prepared data directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(synth_c, students, questions, concepts, length);
        if (*prepare) return cmd_prepare(prep_c, input, schema);
        if (*train_seq) return cmd_train_seq(seq_c, data_dir);
        if (*train) return cmd_train(train_c, data_dir);
        if (*evalc) return cmd_eval(eval_c, data_dir, checkpoint, part);
        if (*ablate) return cmd_ablate(abl_c, data_dir);
        if (*sweep_len) return cmd_sweep_length(len_c, data_dir, lengths);
        if (*sweep_merge) return cmd_sweep_merge(merge_c, merge_dirs);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const data::DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const numcore::ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
