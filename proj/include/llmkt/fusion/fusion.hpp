// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "llmkt/context/context.hpp"
#include "llmkt/numcore/checkpoint.hpp"
#include "llmkt/prompt/prompt.hpp"
#include "llmkt/seqkt/seqkt.hpp"

namespace llmkt::fusion {

using numcore::Real;
using numcore::Tensor;

enum class MergeKind { Add, Avg, Concat };
MergeKind parse_merge_kind(std::string_view s);
std::string to_string(MergeKind k);

enum class AdapterKind { Context, Sequence };

/// Two-layer perceptron in_dim -> d_e -> d_e with GELU in between.
struct Adapter {
    AdapterKind kind = AdapterKind::Context;
    int in_dim = 0;
    int d_e = 0;
    numcore::NamedTensors params;  // w1, b1, w2, b2
};

Adapter init_adapter(AdapterKind kind, int in_dim, int d_e, std::uint64_t seed);

/// Rows of r ([n, in_dim]) mapped to [n, d_e].
Tensor adapt(const Adapter& adapter, const Tensor& r);
std::vector<Real> adapt_context(const Adapter& adapter, const context::ContextVec& r);
std::vector<Real> adapt_sequence(const Adapter& adapter, const std::vector<Real>& r);

struct FusedVec {
    std::vector<Real> values;
    prompt::SlotKind entity = prompt::SlotKind::Ques;
    bool has_context = false;
    bool has_sequence = false;
};

/// g over optional inputs. With one input Add and Avg return it unchanged and
/// Concat projects it with the absent half zero-filled. `projection` is the
/// [d_e, 2 d_e] Concat weight and may be undefined for Add/Avg.
Tensor merge(MergeKind g, const Tensor& h_cont, const Tensor& h_seq, const Tensor& projection = {});
std::vector<Real> merge(MergeKind g, const std::optional<std::vector<Real>>& h_cont,
                        const std::optional<std::vector<Real>>& h_seq, const Tensor& projection = {});

struct FusionConfig {
    MergeKind merge = MergeKind::Add;
    int d_e = 64;
    bool use_context = true;   // false for the "- Context" ablation
    bool use_sequence = true;  // false for the "- Sequence" ablation
};

struct FusionModel {
    FusionConfig config;
    Adapter context_adapter;
    Adapter sequence_adapter;
    Tensor projection;  // Concat only

    std::vector<Tensor> parameters() const;
    numcore::NamedTensors named() const;
};

FusionModel init_fusion(const FusionConfig& config, int d_t, int d_s, std::uint64_t seed);

/// What one slot needs: its entity and, when the item carries it, the text.
struct SlotRequest {
    prompt::SlotKind slot = prompt::SlotKind::Ques;
    int entity_id = 0;
    std::optional<std::string> text;
};

std::vector<SlotRequest> slot_requests(const prompt::PromptPlan& plan, const data::HistoryWindow& window);

/// Frozen or trainable sources the slot vectors are built from.
struct FusionSources {
    const context::ContextEncoderModel* encoder = nullptr;  // null: no context branch
    const prompt::Vocab* vocab = nullptr;
    const seqkt::IdEmbeddings* ids = nullptr;  // null: no sequence branch
};

struct SlotBatch {
    Tensor vectors;  // [requests, d_e]
    std::vector<bool> has_context;
    std::vector<bool> has_sequence;
};

/// Differentiable slot vectors e = g(f_cont(text), f_seq(id)) for each request.
/// Throws when a request has neither modality.
SlotBatch embed_slots(const FusionModel& model, const FusionSources& sources,
                      const std::vector<SlotRequest>& requests);

/// Inference helper aligned with plan.bindings.
std::vector<FusedVec> build_slot_embeddings(const data::HistoryWindow& window, const prompt::PromptPlan& plan,
                                            const FusionModel& model, const FusionSources& sources);

}  // namespace llmkt::fusion
