// SPDX-License-Identifier: Apache-2.0
#include "llmkt/data/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <unordered_map>

#include "csv.hpp"

namespace llmkt::data {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (seps.find(c) != std::string::npos) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    std::erase_if(out, [](const std::string& x) { return x.empty(); });
    return out;
}

bool parse_int(const std::string& s, std::int64_t& out) {
    const auto t = trim(s);
    if (t.empty()) return false;
    const auto* end = t.data() + t.size();
    auto [p, ec] = std::from_chars(t.data(), end, out);
    return ec == std::errc{} && p == end;
}

double parse_number(const std::string& s, std::size_t line, const std::string& column) {
    const auto t = trim(s);
    try {
        std::size_t pos = 0;
        const double v = std::stod(t, &pos);
        if (pos != t.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("column '" + column + "' is not numeric: '" + s + "'", line);
    }
}

/// Parses boolean-ish correctness values; returns nullopt for values that are
/// numeric but neither 0 nor 1 (partial credit).
std::optional<bool> parse_correct(const std::string& raw, std::size_t line, const std::string& column) {
    const auto t = trim(raw);
    std::string low = t;
    std::transform(low.begin(), low.end(), low.begin(), [](unsigned char c) { return std::tolower(c); });
    if (low == "true" || low == "yes") return true;
    if (low == "false" || low == "no") return false;
    const double v = parse_number(t, line, column);
    if (v == 1.0) return true;
    if (v == 0.0) return false;
    return std::nullopt;
}

/// Maps entity ids of one column to integers: numeric columns keep their
/// values, anything else is densely numbered by first appearance.
class IdColumn {
   public:
    void observe(const std::string& v) {
        if (v.empty()) return;
        std::int64_t x;
        if (!parse_int(v, x) || x < 0 || x > std::numeric_limits<int>::max()) numeric_ = false;
        if (!index_.count(v)) {
            const int id = static_cast<int>(order_.size());
            index_.emplace(v, id);
            order_.push_back(v);
        }
    }
    int map(const std::string& v) const {
        if (numeric_) {
            std::int64_t x = 0;
            parse_int(v, x);
            return static_cast<int>(x);
        }
        return index_.at(v);
    }

   private:
    bool numeric_ = true;
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> order_;
};

struct Columns {
    std::map<std::string, std::size_t> index;
    std::size_t width = 0;

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) return std::nullopt;
        return it->second;
    }
    std::size_t need(const std::string& name, const std::string& schema) const {
        auto c = find(name);
        if (!c) throw ParseError(schema + " file lacks required column '" + name + "'", 1);
        return *c;
    }
};

Columns header_columns(const csv::Record& header) {
    Columns cols;
    cols.width = header.fields.size();
    for (std::size_t i = 0; i < header.fields.size(); ++i) cols.index[trim(header.fields[i])] = i;
    return cols;
}

struct RawRow {
    std::string student;
    std::string order_key;     // chronological sort key
    double order_value = 0.0;  // numeric sort key when available
    bool numeric_order = false;
    std::size_t file_pos = 0;
    std::string qid;
    std::vector<std::string> cids;
    std::optional<std::string> qtext;
    std::vector<std::string> ctexts;
    bool correct = false;
};

/// Sorts rows chronologically per student (stable on file order), assigns
/// seq_index and maps ids.
std::vector<Interaction> finish_rows(std::vector<RawRow> rows) {
    IdColumn qcol, ccol;
    for (const auto& r : rows) {
        qcol.observe(r.qid);
        for (const auto& c : r.cids) ccol.observe(c);
    }
    std::unordered_map<std::string, std::size_t> first_seen;
    for (const auto& r : rows) first_seen.emplace(r.student, first_seen.size());
    std::stable_sort(rows.begin(), rows.end(), [&](const RawRow& a, const RawRow& b) {
        const auto sa = first_seen.at(a.student), sb = first_seen.at(b.student);
        if (sa != sb) return sa < sb;
        if (a.numeric_order && b.numeric_order) {
            if (a.order_value != b.order_value) return a.order_value < b.order_value;
        } else if (a.order_key != b.order_key) {
            return a.order_key < b.order_key;
        }
        return a.file_pos < b.file_pos;
    });
    std::vector<Interaction> out;
    out.reserve(rows.size());
    std::unordered_map<std::string, std::int64_t> counter;
    for (auto& r : rows) {
        Interaction it;
        it.student_id = r.student;
        if (!r.qid.empty()) it.question_id = qcol.map(r.qid);
        for (const auto& c : r.cids) it.concept_ids.push_back(ccol.map(c));
        it.question_text = std::move(r.qtext);
        it.concept_texts = std::move(r.ctexts);
        it.correct = r.correct;
        it.seq_index = counter[r.student]++;
        out.push_back(std::move(it));
    }
    return out;
}

void check_width(const csv::Record& rec, const Columns& cols) {
    if (rec.fields.size() != cols.width) {
        throw ParseError("expected " + std::to_string(cols.width) + " fields, found " +
                             std::to_string(rec.fields.size()),
                         rec.line);
    }
}

LoadResult load_native(const std::vector<csv::Record>& recs) {
    static const std::vector<std::string> kHeader = {"student_id",  "seq_index",     "question_id",  "concept_ids",
                                                     "correct",     "question_text", "concept_texts"};
    LoadResult res;
    if (recs.empty()) throw ParseError("empty file", 1);
    const auto cols = header_columns(recs[0]);
    std::vector<std::size_t> at;
    for (const auto& h : kHeader) at.push_back(cols.need(h, "native"));
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        check_width(rec, cols);
        const auto& f = rec.fields;
        const std::string student = trim(f[at[0]]);
        const std::string qid = trim(f[at[2]]);
        const auto cids = split(f[at[3]], ";");
        if (student.empty() || trim(f[at[4]]).empty() || (qid.empty() && cids.empty())) {
            ++res.dropped;
            res.warnings.push_back("line " + std::to_string(rec.line) + ": missing mandatory field, row dropped");
            continue;
        }
        Interaction it;
        it.student_id = student;
        std::int64_t v = 0;
        if (!parse_int(f[at[1]], v)) throw ParseError("seq_index is not an integer", rec.line);
        it.seq_index = v;
        if (!qid.empty()) {
            if (!parse_int(qid, v) || v < 0) throw ParseError("question_id is not a non-negative integer", rec.line);
            it.question_id = static_cast<int>(v);
        }
        for (const auto& c : cids) {
            if (!parse_int(c, v) || v < 0) throw ParseError("concept id '" + c + "' is not an integer", rec.line);
            it.concept_ids.push_back(static_cast<int>(v));
        }
        auto corr = parse_correct(f[at[4]], rec.line, "correct");
        if (!corr) throw ParseError("correct must be 0 or 1", rec.line);
        it.correct = *corr;
        if (!f[at[5]].empty()) it.question_text = f[at[5]];
        it.concept_texts = split(f[at[6]], ";");
        res.interactions.push_back(std::move(it));
    }
    return res;
}

LoadResult load_assist(const std::vector<csv::Record>& recs) {
    LoadResult res;
    if (recs.empty()) throw ParseError("empty file", 1);
    const auto cols = header_columns(recs[0]);
    const auto user = cols.need("user_id", "assist");
    const auto correct = cols.need("correct", "assist");
    const bool skill_form = cols.find("skill_id").has_value();
    std::vector<RawRow> rows;
    if (skill_form) {
        const auto problem = cols.need("problem_id", "assist");
        const auto skill = cols.need("skill_id", "assist");
        const auto skill_name = cols.need("skill_name", "assist");
        const auto order = cols.find("order_id");
        for (std::size_t i = 1; i < recs.size(); ++i) {
            const auto& rec = recs[i];
            check_width(rec, cols);
            const auto& f = rec.fields;
            if (trim(f[skill]).empty() || trim(f[skill_name]).empty() || trim(f[user]).empty() ||
                trim(f[problem]).empty()) {
                ++res.dropped;
                continue;
            }
            auto corr = parse_correct(f[correct], rec.line, "correct");
            if (!corr) {
                ++res.dropped;
                continue;
            }
            RawRow r;
            r.student = trim(f[user]);
            r.file_pos = i;
            if (order) {
                r.order_value = parse_number(f[*order], rec.line, "order_id");
                r.numeric_order = true;
            }
            r.qid = trim(f[problem]);
            r.cids = split(f[skill], "_;");
            r.ctexts = {trim(f[skill_name])};
            r.correct = *corr;
            rows.push_back(std::move(r));
        }
    } else {
        const auto seq = cols.need("sequence_id", "assist");
        const auto log = cols.find("log_id");
        for (std::size_t i = 1; i < recs.size(); ++i) {
            const auto& rec = recs[i];
            check_width(rec, cols);
            const auto& f = rec.fields;
            if (trim(f[seq]).empty() || trim(f[user]).empty()) {
                ++res.dropped;
                continue;
            }
            auto corr = parse_correct(f[correct], rec.line, "correct");
            if (!corr) {
                ++res.dropped;
                continue;
            }
            RawRow r;
            r.student = trim(f[user]);
            r.file_pos = i;
            if (log) {
                r.order_value = parse_number(f[*log], rec.line, "log_id");
                r.numeric_order = true;
            }
            r.cids = {trim(f[seq])};
            r.correct = *corr;
            rows.push_back(std::move(r));
        }
    }
    if (res.dropped) {
        res.warnings.push_back(std::to_string(res.dropped) + " rows dropped for empty skill/id fields or partial credit");
    }
    res.interactions = finish_rows(std::move(rows));
    return res;
}

LoadResult load_junyi(const std::vector<csv::Record>& recs) {
    LoadResult res;
    if (recs.empty()) throw ParseError("empty file", 1);
    const auto cols = header_columns(recs[0]);
    const auto user = cols.need("uuid", "junyi");
    const auto problem = cols.need("upid", "junyi");
    const auto correct = cols.need("is_correct", "junyi");
    const auto ts = cols.need("timestamp_TW", "junyi");
    std::vector<RawRow> rows;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        check_width(rec, cols);
        const auto& f = rec.fields;
        if (trim(f[user]).empty() || trim(f[problem]).empty() || trim(f[correct]).empty()) {
            ++res.dropped;
            continue;
        }
        auto corr = parse_correct(f[correct], rec.line, "is_correct");
        if (!corr) {
            ++res.dropped;
            continue;
        }
        RawRow r;
        r.student = trim(f[user]);
        r.file_pos = i;
        r.order_key = trim(f[ts]);
        r.qid = trim(f[problem]);
        r.correct = *corr;
        rows.push_back(std::move(r));
    }
    if (res.dropped) res.warnings.push_back(std::to_string(res.dropped) + " rows dropped for missing fields");
    res.interactions = finish_rows(std::move(rows));
    return res;
}

LoadResult load_nips(const std::vector<csv::Record>& recs) {
    LoadResult res;
    if (recs.empty()) throw ParseError("empty file", 1);
    const auto cols = header_columns(recs[0]);
    const auto user = cols.need("UserId", "nips");
    const auto question = cols.need("QuestionId", "nips");
    const auto correct = cols.need("IsCorrect", "nips");
    const auto date = cols.need("DateAnswered", "nips");
    const auto subject = cols.find("SubjectId");
    const auto qtext = cols.find("QuestionText");
    const auto stext = cols.find("SubjectText");
    std::vector<RawRow> rows;
    for (std::size_t i = 1; i < recs.size(); ++i) {
        const auto& rec = recs[i];
        check_width(rec, cols);
        const auto& f = rec.fields;
        if (trim(f[user]).empty() || trim(f[question]).empty() || trim(f[correct]).empty()) {
            ++res.dropped;
            continue;
        }
        auto corr = parse_correct(f[correct], rec.line, "IsCorrect");
        if (!corr) {
            ++res.dropped;
            continue;
        }
        RawRow r;
        r.student = trim(f[user]);
        r.file_pos = i;
        r.order_key = trim(f[date]);
        r.qid = trim(f[question]);
        if (subject) r.cids = split(f[*subject], "[],; ");
        if (qtext && !trim(f[*qtext]).empty()) r.qtext = trim(f[*qtext]);
        if (stext) r.ctexts = split(f[*stext], ";");
        r.correct = *corr;
        rows.push_back(std::move(r));
    }
    if (res.dropped) res.warnings.push_back(std::to_string(res.dropped) + " rows dropped for missing fields");
    res.interactions = finish_rows(std::move(rows));
    return res;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

ParseError::ParseError(const std::string& what, std::size_t line)
    : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

SchemaKind parse_schema_kind(const std::string& name) {
    if (name == "native") return SchemaKind::Native;
    if (name == "assist" || name == "assist-like") return SchemaKind::AssistLike;
    if (name == "junyi" || name == "junyi-like") return SchemaKind::JunyiLike;
    if (name == "nips" || name == "nips-like") return SchemaKind::NipsLike;
    throw DataError("unknown schema kind '" + name + "' (expected native, assist-like, junyi-like or nips-like)");
}

std::string to_string(SchemaKind kind) {
    switch (kind) {
        case SchemaKind::Native: return "native";
        case SchemaKind::AssistLike: return "assist-like";
        case SchemaKind::JunyiLike: return "junyi-like";
        case SchemaKind::NipsLike: return "nips-like";
    }
    return "unknown";
}

LoadResult load_csv(const std::filesystem::path& path, SchemaKind kind) {
    if (!std::filesystem::exists(path)) throw DataError("no such file: " + path.string());
    const auto recs = csv::read(path);
    switch (kind) {
        case SchemaKind::Native: return load_native(recs);
        case SchemaKind::AssistLike: return load_assist(recs);
        case SchemaKind::JunyiLike: return load_junyi(recs);
        case SchemaKind::NipsLike: return load_nips(recs);
    }
    throw DataError("unknown schema kind");
}

void write_native_csv(const std::filesystem::path& path, const std::vector<Interaction>& rows) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << "student_id,seq_index,question_id,concept_ids,correct,question_text,concept_texts\n";
    for (const auto& r : rows) {
        std::string cids, ctexts;
        for (std::size_t i = 0; i < r.concept_ids.size(); ++i) cids += (i ? ";" : "") + std::to_string(r.concept_ids[i]);
        for (std::size_t i = 0; i < r.concept_texts.size(); ++i) ctexts += (i ? ";" : "") + r.concept_texts[i];
        os << csv::quote(r.student_id) << ',' << r.seq_index << ','
           << (r.question_id ? std::to_string(*r.question_id) : "") << ',' << cids << ',' << (r.correct ? 1 : 0) << ','
           << csv::quote(r.question_text.value_or("")) << ',' << csv::quote(ctexts) << '\n';
    }
}

Dataset Dataset::from_interactions(const std::vector<Interaction>& rows) {
    Dataset ds;
    std::unordered_map<std::string, std::size_t> index;
    ds.fields = {true, true, true, true};
    if (rows.empty()) ds.fields = {};
    for (const auto& r : rows) {
        if (!r.question_id && r.concept_ids.empty()) {
            throw DataError("interaction of student '" + r.student_id + "' has neither question nor concept id");
        }
        auto [it, inserted] = index.emplace(r.student_id, ds.students.size());
        if (inserted) ds.students.push_back({r.student_id, {}});
        auto& seq = ds.students[it->second].interactions;
        if (!seq.empty() && r.seq_index <= seq.back().seq_index) {
            throw DataError("seq_index of student '" + r.student_id + "' is not strictly increasing at " +
                            std::to_string(r.seq_index));
        }
        seq.push_back(r);
        if (r.question_id) ds.n_questions = std::max(ds.n_questions, *r.question_id + 1);
        for (int c : r.concept_ids) ds.n_concepts = std::max(ds.n_concepts, c + 1);
        ds.fields.question_ids = ds.fields.question_ids && r.question_id.has_value();
        ds.fields.concept_ids = ds.fields.concept_ids && !r.concept_ids.empty();
        ds.fields.question_text = ds.fields.question_text && r.question_text.has_value();
        ds.fields.concept_text = ds.fields.concept_text && !r.concept_texts.empty();
    }
    return ds;
}

std::size_t Dataset::interaction_count() const {
    std::size_t n = 0;
    for (const auto& s : students) n += s.interactions.size();
    return n;
}

std::vector<std::string> Dataset::student_ids() const {
    std::vector<std::string> ids;
    for (const auto& s : students) ids.push_back(s.student_id);
    return ids;
}

std::size_t Dataset::find_student(const std::string& id) const {
    for (std::size_t i = 0; i < students.size(); ++i)
        if (students[i].student_id == id) return i;
    return static_cast<std::size_t>(-1);
}

std::uint64_t uniform_index(std::uint64_t bound, std::uint64_t& state) {
    if (bound == 0) throw DataError("uniform_index: empty range");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = splitmix64(state);
    } while (x >= limit);
    return x % bound;
}

DatasetSplit split_students(std::vector<std::string> students, std::uint64_t seed) {
    std::sort(students.begin(), students.end());
    students.erase(std::unique(students.begin(), students.end()), students.end());
    const std::size_t n = students.size();
    if (n < 3) throw DataError("need at least 3 students to split, got " + std::to_string(n));
    std::uint64_t state = seed;
    for (std::size_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(i + 1, state));
        std::swap(students[i], students[j]);
    }
    const std::size_t n_eval = std::max<std::size_t>(1, n / 10);
    DatasetSplit s;
    s.seed = seed;
    s.valid.assign(students.begin(), students.begin() + static_cast<std::ptrdiff_t>(n_eval));
    s.test.assign(students.begin() + static_cast<std::ptrdiff_t>(n_eval),
                  students.begin() + static_cast<std::ptrdiff_t>(2 * n_eval));
    s.train.assign(students.begin() + static_cast<std::ptrdiff_t>(2 * n_eval), students.end());
    return s;
}

void save_split(const std::filesystem::path& path, const DatasetSplit& split) {
    nlohmann::ordered_json j;
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["valid"] = split.valid;
    j["test"] = split.test;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

DatasetSplit load_split(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open split manifest " + path.string());
    nlohmann::json j;
    try {
        is >> j;
        DatasetSplit s;
        s.seed = j.at("seed").get<std::uint64_t>();
        s.train = j.at("train").get<std::vector<std::string>>();
        s.valid = j.at("valid").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed split manifest " + path.string() + ": " + e.what());
    }
}

std::vector<HistoryWindow> window_histories(const Dataset& ds, std::size_t student, std::size_t max_len) {
    if (max_len == 0) throw DataError("history length must be at least 1");
    const auto& seq = ds.students.at(student).interactions;
    std::vector<HistoryWindow> out;
    for (std::size_t t = 1; t < seq.size(); ++t) {
        const std::size_t begin = t > max_len ? t - max_len : 0;
        HistoryWindow w;
        w.history = std::span<const Interaction>(seq.data() + begin, t - begin);
        w.target = &seq[t];
        w.label = seq[t].correct;
        w.student = student;
        w.target_index = t;
        out.push_back(w);
    }
    return out;
}

std::vector<HistoryWindow> window_histories(const Dataset& ds, const std::vector<std::string>& students,
                                            std::size_t max_len) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ds.students.size(); ++i) index.emplace(ds.students[i].student_id, i);
    std::vector<HistoryWindow> out;
    for (const auto& id : students) {
        auto it = index.find(id);
        if (it == index.end()) throw DataError("student '" + id + "' not present in dataset");
        auto w = window_histories(ds, it->second, max_len);
        out.insert(out.end(), w.begin(), w.end());
    }
    return out;
}

}  // namespace llmkt::data
