// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "llmkt/data/data.hpp"
#include "llmkt/lm/llmkt.hpp"
#include "llmkt/seqkt/seqkt.hpp"

namespace llmkt::eval {

/// Bad input from the caller: missing artifacts, invalid configs, unknown names.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    lm::LlmKtConfig model;
    seqkt::SeqConfig seq;  // kind and entity counts are filled in from the model config and data
    seqkt::SeqTrainConfig seq_train;
};

/// The model keys of lm::to_json plus "seq_encoder": {d_s, hidden, epochs,
/// batch_size, lr, weight_decay, patience, max_len}.
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Seeds model init, LLM-KT training order and sequence-encoder training.
void apply_seed(ExperimentConfig& c, std::uint64_t seed);

/// Run identity: the headline axes plus the complete config and data hash.
/// `id` is a hex digest of everything else.
struct Fingerprint {
    nlohmann::json fields;
    std::string id;
};
Fingerprint fingerprint(const ExperimentConfig& c, std::uint64_t data_hash);

struct MetricsReport {
    double auc = 0;
    double acc = 0;
    std::size_t n = 0;
    Fingerprint fingerprint;
};
nlohmann::json to_json(const MetricsReport& r);
MetricsReport score(std::span<const double> probs, const std::vector<bool>& labels, Fingerprint fp);
void write_metrics_json(const std::filesystem::path& path, const MetricsReport& r);

/// Accuracy of always predicting the more frequent label.
double majority_acc(const std::vector<bool>& labels);

/// A prepared data directory: interactions.csv (native schema) and split.json.
struct PreparedData {
    std::filesystem::path dir;
    data::Dataset ds;
    data::DatasetSplit split;
    prompt::Vocab vocab;
    std::uint64_t hash = 0;  // over the interactions file and the split

    std::vector<data::HistoryWindow> windows(const std::string& part, std::size_t max_len) const;
    std::filesystem::path cache_dir() const { return dir / "cache"; }
};

void write_prepared(const std::filesystem::path& dir, const std::vector<data::Interaction>& rows,
                    std::uint64_t split_seed);
PreparedData load_prepared(const std::filesystem::path& dir);

using Log = std::function<void(const std::string&)>;

/// Sequence encoder of the configured kind, trained on the train split and
/// cached under the data directory by config and data hash.
seqkt::SeqTrainResult sequence_encoder(const PreparedData& data, const ExperimentConfig& c, const Log& log = {});

/// Pretrained, frozen base LM, cached like the sequence encoder. All
/// variants of one experiment share it: pretraining reads the default
/// template for the data with nothing dropped at length 100.
lm::ToyLm base_model(const PreparedData& data, const ExperimentConfig& c, const Log& log = {});

/// r_QID / r_CID for the configured encoder kind.
seqkt::IdEmbeddings id_embeddings(const PreparedData& data, const ExperimentConfig& c, const lm::ToyLm& base,
                                  const Log& log = {});

MetricsReport evaluate(const lm::LlmKtModel& model, const PreparedData& data, const std::string& part,
                       const Fingerprint& fp);

struct RunResult {
    lm::LlmKtModel model;
    lm::TrainReport train;
    MetricsReport test;
};
RunResult train_and_evaluate(const PreparedData& data, const ExperimentConfig& c, const Log& log = {});

struct Variant {
    std::string name;
    ExperimentConfig config;
};

/// full, - Question, - Concept, - Sequence, - Context. Variants the data
/// cannot support are left out and described in `notices`.
std::vector<Variant> ablation_variants(const ExperimentConfig& base, const data::Dataset& ds,
                                       std::vector<std::string>* notices = nullptr);
std::vector<Variant> length_variants(const ExperimentConfig& base, std::span<const std::size_t> lengths);
std::vector<Variant> merge_variants(const ExperimentConfig& base);

struct TableRow {
    std::string name;
    MetricsReport report;
};

/// Trains and evaluates each variant in order. A variant whose fingerprint
/// matches an earlier row, or a row of `prior`, reuses that row's metrics.
std::vector<TableRow> run_variants(const PreparedData& data, const std::vector<Variant>& variants,
                                   const Log& log = {}, std::span<const TableRow> prior = {});

/// "<key>,auc,acc,n" followed by one line per row.
void write_table_csv(const std::filesystem::path& path, const std::string& key, const std::vector<TableRow>& rows);

/// One row per merge function, an AUC/ACC column pair per dataset and their average.
void write_merge_table_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, std::vector<TableRow>>>& sets);

}  // namespace llmkt::eval
