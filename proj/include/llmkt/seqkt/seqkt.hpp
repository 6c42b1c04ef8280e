// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "llmkt/data/interaction.hpp"
#include "llmkt/numcore/checkpoint.hpp"

namespace llmkt::seqkt {

using numcore::Real;

enum class SeqKind { DKT, AKTLite };

SeqKind parse_seq_kind(std::string_view s);
std::string to_string(SeqKind k);

/// One observed interaction as the encoders see it; -1 marks an absent id.
struct SeqStep {
    int question_id = -1;
    int concept_id = -1;
    bool correct = false;
};

SeqStep to_step(const data::Interaction& it);

struct SeqConfig {
    SeqKind kind = SeqKind::DKT;
    int d_s = 64;
    int hidden = 64;
    int n_questions = 0;  // 0 when the dataset has no question ids
    int n_concepts = 0;   // 0 when the dataset has no concept ids
};

/// Parameters are named "<part>.<tensor>". DKT has no explicit id table: the
/// one-hot (id, correctness) input of width 2·n is multiplied by an input
/// projection, stored as the [2n, d_s] table "dkt.in_q" / "dkt.in_c".
struct SeqEncoderModel {
    SeqConfig config;
    numcore::NamedTensors params;
    bool trained = false;

    bool has_questions() const { return config.n_questions > 0; }
    bool has_concepts() const { return config.n_concepts > 0; }
    /// Entity set scored by the main head: questions when present.
    int primary_size() const { return has_questions() ? config.n_questions : config.n_concepts; }
    std::vector<numcore::Tensor> parameters() const;
    const numcore::Tensor& param(const std::string& name) const;
};

SeqEncoderModel init_seq_encoder(const SeqConfig& config, std::uint64_t seed);

/// Next-step correctness probability for every primary entity.
std::vector<Real> dkt_forward(const SeqEncoderModel& model, std::span<const SeqStep> history);

/// Attention weights of the target over `history` (sums to 1).
std::vector<Real> akt_attention_weights(const SeqEncoderModel& model, std::span<const SeqStep> history,
                                        const SeqStep& target);
Real akt_forward(const SeqEncoderModel& model, std::span<const SeqStep> history, const SeqStep& target);

/// Decay rate of AKT-lite, softplus of its raw parameter.
Real akt_decay(const SeqEncoderModel& model);
void set_akt_decay(SeqEncoderModel& model, Real theta);

/// Probability that `target` is answered correctly, for either kind.
Real seq_predict(const SeqEncoderModel& model, std::span<const SeqStep> history, const SeqStep& target);

/// Scores for windows of one dataset, reusing whole-sequence passes where the
/// history is untruncated.
std::vector<Real> predict_windows(const SeqEncoderModel& model, const data::Dataset& ds,
                                  std::span<const data::HistoryWindow> windows);

/// Differentiable training loss of a batch of whole sequences: BCE of each
/// step given its predecessors, summed over the main and auxiliary heads.
numcore::Tensor seq_batch_loss(const SeqEncoderModel& model, const std::vector<std::vector<SeqStep>>& seqs,
                               std::size_t max_len);

/// Mean training loss over the given students, no parameter update.
Real seq_loss(const SeqEncoderModel& model, const data::Dataset& ds, const std::vector<std::size_t>& students,
              std::size_t max_len);

struct SeqTrainConfig {
    int epochs = 30;
    int batch_size = 16;
    Real lr = 2e-3;
    Real weight_decay = 1e-5;
    int patience = 3;
    std::uint64_t seed = 42;
    std::size_t max_len = 100;
};

struct SeqTrainReport {
    Real initial_loss = 0;
    std::vector<Real> train_loss;  // per epoch, measured after the epoch
    std::vector<Real> valid_auc;
    int best_epoch = -1;
    Real best_valid_auc = 0;
};

struct SeqTrainResult {
    SeqEncoderModel model;
    SeqTrainReport report;
};

/// BCE on next-interaction correctness with early stopping on validation AUC;
/// the returned model holds the best epoch's weights.
SeqTrainResult train_seq_encoder(const data::Dataset& ds, const std::vector<std::string>& train_ids,
                                 const std::vector<std::string>& valid_ids, const SeqConfig& config,
                                 const SeqTrainConfig& train);

/// r_QID and r_CID tables; empty when the entity kind is absent.
struct IdEmbeddings {
    int d_s = 0;
    std::vector<std::vector<Real>> questions;
    std::vector<std::vector<Real>> concepts;
};

/// AKT-lite returns its embedding rows; DKT averages the two input-projection
/// rows of each id (correct and incorrect variants). Untrained models yield
/// their random rows and append a warning.
IdEmbeddings extract_id_embeddings(const SeqEncoderModel& model, std::vector<std::string>* warnings = nullptr);

void write_embeddings_csv(const std::filesystem::path& path, const IdEmbeddings& emb);

/// Container "<stem>.ckpt" plus JSON manifest "<stem>.json".
void save_seq_model(const std::filesystem::path& stem, const SeqEncoderModel& model);
SeqEncoderModel load_seq_model(const std::filesystem::path& stem);

}  // namespace llmkt::seqkt
