// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace llmkt::data {

/// One answered question in a student's chronology.
struct Interaction {
    std::string student_id;
    std::optional<int> question_id;
    std::vector<int> concept_ids;
    std::optional<std::string> question_text;
    std::vector<std::string> concept_texts;
    bool correct = false;
    std::int64_t seq_index = 0;
};

struct StudentSequence {
    std::string student_id;
    std::vector<Interaction> interactions;  // strictly increasing seq_index
};

/// Which fields the whole dataset carries; drives template selection.
struct FieldAvailability {
    bool question_ids = false;
    bool concept_ids = false;
    bool question_text = false;
    bool concept_text = false;
};

/// Interactions grouped per student, in first-appearance order of students.
struct Dataset {
    std::vector<StudentSequence> students;
    int n_questions = 0;  // max question id + 1
    int n_concepts = 0;   // max concept id + 1
    FieldAvailability fields;

    /// Groups by student and validates per-student chronology.
    static Dataset from_interactions(const std::vector<Interaction>& rows);

    std::size_t interaction_count() const;
    std::vector<std::string> student_ids() const;
    /// Index of a student id, or npos.
    std::size_t find_student(const std::string& id) const;
};

/// A prediction target with its (possibly truncated) chronological history.
/// Views into a Dataset, which must outlive the window.
struct HistoryWindow {
    std::span<const Interaction> history;
    const Interaction* target = nullptr;
    bool label = false;
    std::size_t student = 0;       // index into Dataset::students
    std::size_t target_index = 0;  // index of target within that student's sequence
};

}  // namespace llmkt::data
