// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "llmkt/data/interaction.hpp"

namespace llmkt::data {

struct SynthSpec {
    int n_students = 300;
    int n_questions = 60;
    int n_concepts = 12;
    int interactions_per_student = 100;
    std::uint64_t seed = 42;
    double learning_rate = 0.05;  // skill gain per attempt on a concept
};

/// Synthetic students with known correctness probabilities.
///
/// Skill s(u,c) ~ N(0,1) per student and concept, difficulty d(q) ~ N(0,1),
/// question q belongs to concept q mod n_concepts, and
/// p(correct) = logistic(s(u,c) - d(q)). Each attempt raises s(u,c) by
/// `learning_rate`.
struct SynthResult {
    std::vector<Interaction> interactions;
    std::vector<double> oracle_p;  // aligned with interactions
    std::vector<double> difficulty;
};

SynthResult synth_generate(const SynthSpec& spec);

std::string synth_question_text(int question_id, int concept_id);
std::string synth_concept_text(int concept_id);

double logistic(double x);

void write_oracle_csv(const std::filesystem::path& path, const SynthResult& result);
/// Reads (student_id, seq_index) -> p rows written by write_oracle_csv.
std::vector<std::tuple<std::string, std::int64_t, double>> read_oracle_csv(const std::filesystem::path& path);

}  // namespace llmkt::data
