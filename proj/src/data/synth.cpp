// SPDX-License-Identifier: Apache-2.0
#include "llmkt/data/synth.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "csv.hpp"
#include "llmkt/data/data.hpp"

namespace llmkt::data {

namespace {

struct ConceptPhrasing {
    const char* name;
    const char* question;  // %A and %B are replaced by per-question operands
};

constexpr std::array<ConceptPhrasing, 12> kConcepts = {{
    {"Basic Arithmetic", "What is %A plus %B?"},
    {"Ordering Negative Numbers", "Which is smaller, -%A or -%B?"},
    {"Writing Expressions", "Write an expression for %A more than %B times n."},
    {"Simplifying Fractions", "Simplify the fraction %A over %B."},
    {"Percentages", "What is %A percent of %B?"},
    {"Area of Rectangles", "Find the area of a rectangle %A by %B."},
    {"Prime Numbers", "Is %A times %B a prime number?"},
    {"Multiples", "Is %A a multiple of %B?"},
    {"Rounding", "Round %A point %B to the nearest whole number."},
    {"Angles", "Find the missing angle when the others are %A and %B degrees."},
    {"Mean Average", "Find the mean of %A and %B."},
    {"Squares and Roots", "What is the square of %A plus %B?"},
}};

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    for (std::size_t p = s.find(from); p != std::string::npos; p = s.find(from, p + to.size())) s.replace(p, from.size(), to);
    return s;
}

}  // namespace

double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::string synth_concept_text(int concept_id) {
    if (concept_id < static_cast<int>(kConcepts.size())) return kConcepts[static_cast<std::size_t>(concept_id)].name;
    return "Topic " + std::to_string(concept_id);
}

std::string synth_question_text(int question_id, int concept_id) {
    const int a = 2 + (question_id * 7) % 19;
    const int b = 3 + (question_id * 13) % 17;
    std::string pattern = concept_id < static_cast<int>(kConcepts.size())
                              ? kConcepts[static_cast<std::size_t>(concept_id)].question
                              : "Solve exercise %A of set %B in " + synth_concept_text(concept_id) + ".";
    pattern = replace_all(pattern, "%A", std::to_string(a));
    return replace_all(pattern, "%B", std::to_string(b));
}

SynthResult synth_generate(const SynthSpec& spec) {
    if (spec.n_students < 1 || spec.n_questions < 1 || spec.n_concepts < 1 || spec.interactions_per_student < 1) {
        throw DataError("synthetic counts must all be at least 1");
    }
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SynthResult res;
    res.difficulty.resize(static_cast<std::size_t>(spec.n_questions));
    for (auto& d : res.difficulty) d = normal(rng);

    std::vector<std::string> qtexts, ctexts;
    for (int q = 0; q < spec.n_questions; ++q) qtexts.push_back(synth_question_text(q, q % spec.n_concepts));
    for (int c = 0; c < spec.n_concepts; ++c) ctexts.push_back(synth_concept_text(c));

    const int width = static_cast<int>(std::to_string(spec.n_students - 1).size());
    std::uint64_t pick_state = spec.seed ^ 0xA5A5A5A5A5A5A5A5ull;
    res.interactions.reserve(static_cast<std::size_t>(spec.n_students) *
                             static_cast<std::size_t>(spec.interactions_per_student));
    for (int u = 0; u < spec.n_students; ++u) {
        char id[32];
        std::snprintf(id, sizeof(id), "u%0*d", width, u);
        std::vector<double> skill(static_cast<std::size_t>(spec.n_concepts));
        for (auto& s : skill) s = normal(rng);
        for (int t = 0; t < spec.interactions_per_student; ++t) {
            const int q = static_cast<int>(uniform_index(static_cast<std::uint64_t>(spec.n_questions), pick_state));
            const int c = q % spec.n_concepts;
            const double p = logistic(skill[static_cast<std::size_t>(c)] - res.difficulty[static_cast<std::size_t>(q)]);
            Interaction it;
            it.student_id = id;
            it.question_id = q;
            it.concept_ids = {c};
            it.question_text = qtexts[static_cast<std::size_t>(q)];
            it.concept_texts = {ctexts[static_cast<std::size_t>(c)]};
            it.correct = unit(rng) < p;
            it.seq_index = t;
            res.interactions.push_back(std::move(it));
            res.oracle_p.push_back(p);
            skill[static_cast<std::size_t>(c)] += spec.learning_rate;
        }
    }
    return res;
}

void write_oracle_csv(const std::filesystem::path& path, const SynthResult& result) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << "student_id,seq_index,p\n";
    char buf[64];
    for (std::size_t i = 0; i < result.interactions.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", result.oracle_p[i]);
        os << csv::quote(result.interactions[i].student_id) << ',' << result.interactions[i].seq_index << ',' << buf
           << '\n';
    }
}

std::vector<std::tuple<std::string, std::int64_t, double>> read_oracle_csv(const std::filesystem::path& path) {
    auto recs = csv::read(path);
    std::vector<std::tuple<std::string, std::int64_t, double>> out;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& f = recs[i].fields;
        if (f.size() != 3) throw ParseError("oracle rows need 3 fields", recs[i].line);
        try {
            out.emplace_back(f[0], std::stoll(f[1]), std::stod(f[2]));
        } catch (const std::exception&) {
            throw ParseError("malformed oracle row", recs[i].line);
        }
    }
    return out;
}

}  // namespace llmkt::data
