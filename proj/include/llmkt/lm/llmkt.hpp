// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "llmkt/context/context.hpp"
#include "llmkt/data/data.hpp"
#include "llmkt/fusion/fusion.hpp"
#include "llmkt/lm/lm.hpp"
#include "llmkt/seqkt/seqkt.hpp"

namespace llmkt::lm {

/// Source of the r_QID / r_CID vectors.
enum class EncoderKind { DKT, AKTLite, TokenInit };
EncoderKind parse_encoder_kind(std::string_view s);
std::string to_string(EncoderKind k);

struct TrainConfig {
    int epochs = 3;
    int batch_size = 100;  // consecutive windows of one student per step
    int grad_accum = 1;
    Real lr = 3e-3;
    Real weight_decay = 1e-5;
    int patience = 3;
    std::uint64_t seed = 42;
    Real window_fraction = 0.5;  // share of training batches kept each run
};

struct LlmKtConfig {
    prompt::TemplateKind template_kind = prompt::TemplateKind::Type1;
    prompt::DropSet drop;
    std::size_t max_len = 100;
    EncoderKind encoder = EncoderKind::AKTLite;
    LmConfig lm;
    LoraConfig lora;
    context::ContextConfig context;
    fusion::FusionConfig fusion;
    TrainConfig train;
    PretrainConfig pretrain;
    std::uint64_t seed = 42;
};

nlohmann::json to_json(const LlmKtConfig& c);
/// Fields absent from `j` keep the values of `base`; unknown keys are errors.
LlmKtConfig config_from_json(const nlohmann::json& j, LlmKtConfig base = {});

/// Everything needed to score a window.
struct LlmKtModel {
    LlmKtConfig config;
    prompt::Vocab vocab;
    ToyLm lm;
    Lora lora;
    context::ContextEncoderModel encoder;
    fusion::FusionModel fusion;
    seqkt::IdEmbeddings ids;

    fusion::FusionSources sources() const;
    std::vector<Tensor> trainable() const;
    numcore::NamedTensors named_trainable() const;
    /// Hash over every tensor that must stay fixed during LLM-KT training.
    std::uint64_t frozen_checksum() const;
};

/// Wraps a (pre-trained) base LM whose vocabulary size must equal the vocab's.
LlmKtModel init_llm_kt(const LlmKtConfig& config, const prompt::Vocab& vocab, ToyLm base, seqkt::IdEmbeddings ids);

/// Token-embedding rows of the numerals 0..n-1, used as r_ID by the
/// "token-init" encoder kind.
seqkt::IdEmbeddings token_init_embeddings(const ToyLm& lm, const prompt::Vocab& vocab, int n_questions,
                                          int n_concepts);

/// Rendered prompts of the longest window of each student, as token streams
/// for base-model pretraining.
std::vector<std::vector<int>> pretraining_streams(const data::Dataset& ds, const std::vector<std::string>& students,
                                                  const LlmKtConfig& config, const prompt::Vocab& vocab);

/// Windows of one student packed into one forward pass.
struct PreparedChunk {
    PackedBatch batch;
    std::vector<fusion::SlotRequest> slots;  // aligned with batch.slot_rows
    std::vector<bool> labels;                // aligned with batch.answer_rows
};

std::vector<PreparedChunk> prepare_chunks(const LlmKtModel& model, std::span<const data::HistoryWindow> windows,
                                          std::size_t chunk_size);

/// Answer logits [windows, V] of one chunk.
Tensor chunk_logits(const LlmKtModel& model, const PreparedChunk& chunk, std::mt19937_64* dropout_rng = nullptr);

std::vector<Real> predict_windows(const LlmKtModel& model, std::span<const data::HistoryWindow> windows);

struct TrainReport {
    std::vector<Real> train_loss;  // mean step loss per epoch
    std::vector<Real> valid_auc;
    int best_epoch = -1;
    Real best_valid_auc = 0;
    std::uint64_t frozen_before = 0;
    std::uint64_t frozen_after = 0;
    std::size_t train_windows = 0;
    double seconds = 0;
};

struct TrainResult {
    LlmKtModel model;
    TrainReport report;
};

/// Cross-entropy on the gold answer token, AdamW with a cosine schedule,
/// early stopping on validation AUC. The returned model holds the best
/// epoch's trainable weights.
TrainResult train_llm_kt(LlmKtModel model, const data::Dataset& ds, const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& valid_ids);

void write_training_curve_csv(const std::filesystem::path& path, const TrainReport& report);

/// "<stem>.ckpt" plus the manifest "<stem>.json" {architecture, lora, vocab_hash, seed, ...}.
void save_llm_kt(const std::filesystem::path& stem, const LlmKtModel& model);
/// Rebuilds the model around `vocab`; throws when its hash differs from the manifest's.
LlmKtModel load_llm_kt(const std::filesystem::path& stem, const prompt::Vocab& vocab);

}  // namespace llmkt::lm
