// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "llmkt/data/interaction.hpp"

namespace llmkt::data {

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// CSV malformation, carrying the 1-based physical line number.
class ParseError : public DataError {
   public:
    ParseError(const std::string& what, std::size_t line);
    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

enum class SchemaKind { Native, AssistLike, JunyiLike, NipsLike };

SchemaKind parse_schema_kind(const std::string& name);
std::string to_string(SchemaKind kind);

struct LoadResult {
    std::vector<Interaction> interactions;
    std::size_t dropped = 0;
    std::vector<std::string> warnings;
};

/// Reads an interaction log.
///
/// native:  student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts
///          (concept lists ';'-delimited)
/// assist:  ASSISTments skill-builder export. With skill_id/skill_name columns
///          (2009 form) rows lacking either are dropped; a sequence_id column
///          without problem_id (2015 form) yields concept ids only.
/// junyi:   uuid,upid,is_correct,timestamp_TW -> question ids only.
/// nips:    UserId,QuestionId,IsCorrect,DateAnswered[,SubjectId][,QuestionText][,SubjectText].
///
/// Opaque non-numeric entity ids are mapped to dense integers in order of
/// first appearance.
LoadResult load_csv(const std::filesystem::path& path, SchemaKind kind);

void write_native_csv(const std::filesystem::path& path, const std::vector<Interaction>& rows);

struct DatasetSplit {
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> valid;
    std::vector<std::string> test;
};

/// Seeded 8:1:1 partition by student count; valid and test each receive
/// max(1, floor(n/10)) students, the remainder goes to train.
DatasetSplit split_students(std::vector<std::string> students, std::uint64_t seed);

void save_split(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_split(const std::filesystem::path& path);

/// One window per interaction that has at least one predecessor; histories
/// keep the most recent `max_len` predecessors.
std::vector<HistoryWindow> window_histories(const Dataset& ds, std::size_t student, std::size_t max_len);
std::vector<HistoryWindow> window_histories(const Dataset& ds, const std::vector<std::string>& students,
                                            std::size_t max_len);

/// Deterministic uniform integer in [0, bound) from a 64-bit engine.
std::uint64_t uniform_index(std::uint64_t bound, std::uint64_t& state);

}  // namespace llmkt::data
