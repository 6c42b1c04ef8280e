// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "llmkt/numcore/attention.hpp"
#include "llmkt/numcore/checkpoint.hpp"
#include "llmkt/prompt/prompt.hpp"

namespace llmkt::lm {

using numcore::Real;
using numcore::Tensor;

struct LmConfig {
    int vocab_size = 0;
    int d_e = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
};

/// Decoder-only transformer: token table, pre-LN blocks whose attention
/// carries per-head linear distance biases (ALiBi), final norm and an untied
/// output head. Parameter names:
/// tok, l<i>.{ln1.g,ln1.b,wq,wk,wv,wo,ln2.g,ln2.b,ff1.w,ff1.b,ff2.w,ff2.b},
/// lnf.g, lnf.b, head.w, head.b.
struct ToyLm {
    LmConfig config;
    numcore::NamedTensors params;

    std::vector<Tensor> parameters() const;
    const Tensor& param(const std::string& name) const;
    void set_frozen(bool frozen);
};

ToyLm init_toy_lm(const LmConfig& config, std::uint64_t seed);

struct LoraConfig {
    int rank = 8;
    Real alpha = 8.0;
    Real dropout = 0.0;

    Real scale() const { return alpha / static_cast<Real>(rank); }
    static LoraConfig paper() { return {32, 32.0, 0.1}; }
};

/// Low-rank pairs on the query and value projections of every layer:
/// l<i>.q.A [r, d], l<i>.q.B [d, r] and the same for v. B starts at zero.
struct Lora {
    LoraConfig config;
    numcore::NamedTensors params;

    std::vector<Tensor> parameters() const;
    std::size_t trainable_count() const;
};

Lora init_lora(const ToyLm& lm, const LoraConfig& config, std::uint64_t seed);

/// x·Wᵀ + scale·(dropout(x)·Aᵀ)·Bᵀ. `rng` may be null when dropout is 0.
Tensor lora_apply(const Tensor& x, const Tensor& w, const Tensor& a, const Tensor& b, Real scale, Real dropout = 0.0,
                  std::mt19937_64* rng = nullptr);

/// Several prompts packed into one sequence as a prefix tree. The first plan
/// (the longest) is laid out whole; every other plan contributes only the
/// rows after its longest common prefix with it, positioned as if the shared
/// prefix preceded them.
struct PackedBatch {
    std::vector<int> token_ids;
    std::vector<int> positions;
    std::vector<numcore::AttentionBlock> layout;  // every row attends its own prompt causally
    std::vector<int> answer_rows;                 // one per plan, in input order
    std::vector<numcore::AttentionBlock> answer_layout;  // query i = answer row i
    std::vector<int> slot_rows;
    std::vector<int> slot_source;  // for each slot row: (plan, binding) flattened index into the input bindings
};

/// Packs plans; `slot_keys[p][b]` identifies the entity injected at binding b
/// of plan p, so shared prefixes only merge when their injected entities agree.
PackedBatch pack_plans(std::span<const prompt::PromptPlan> plans, std::span<const std::vector<std::string>> slot_keys);

/// Logits at each answer row, [plans, V]. `slots` holds one row per entry of
/// batch.slot_rows (or is undefined when there are none); rows are written in
/// place of the token embeddings.
Tensor forward_answers(const ToyLm& lm, const Lora* lora, const PackedBatch& batch, const Tensor& slots,
                       std::mt19937_64* dropout_rng = nullptr);

/// Logits at every row of one causal sequence, [T, V].
Tensor forward_all(const ToyLm& lm, const Lora* lora, std::span<const int> token_ids,
                   std::span<const int> slot_positions = {}, const Tensor& slots = {});

/// Answer-position logits of a single plan with |slots| = |plan.bindings|.
Tensor forward_injected(const ToyLm& lm, const Lora* lora, const prompt::PromptPlan& plan, const Tensor& slots);

/// exp(z_yes) / (exp(z_yes) + exp(z_no)) evaluated stably.
Real yes_probability(Real z_yes, Real z_no);
Real predict_prob(const ToyLm& lm, const Lora* lora, const prompt::PromptPlan& plan, const Tensor& slots);

/// Mean cross-entropy of the gold answer token over the full vocabulary.
Tensor answer_loss(const Tensor& answer_logits, const std::vector<bool>& labels);

struct PretrainConfig {
    int steps = 300;
    int batch = 8;
    int window = 160;
    Real lr = 3e-3;
    std::uint64_t seed = 7;
};

/// Next-token objective over random windows of the given token streams.
/// Returns the mean loss of the first and last tenth of the steps.
std::pair<Real, Real> pretrain_lm(ToyLm& lm, const std::vector<std::vector<int>>& streams,
                                  const PretrainConfig& config);

}  // namespace llmkt::lm
