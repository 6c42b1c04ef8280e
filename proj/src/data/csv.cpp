// SPDX-License-Identifier: Apache-2.0
#include "csv.hpp"

#include <fstream>
#include <sstream>

#include "llmkt/data/data.hpp"

namespace llmkt::data::csv {

std::vector<Record> read(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::stringstream buf;
    buf << is.rdbuf();
    const std::string text = buf.str();

    std::vector<Record> out;
    Record rec;
    std::string field;
    std::size_t line = 1;
    rec.line = 1;
    bool in_quotes = false, after_quote = false, field_started = false;
    std::size_t i = 0;
    if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;  // UTF-8 BOM

    auto end_record = [&] {
        rec.fields.push_back(std::move(field));
        field.clear();
        const bool blank = rec.fields.size() == 1 && rec.fields[0].empty() && !field_started;
        if (!blank) out.push_back(std::move(rec));
        rec = Record{};
        field_started = false;
        after_quote = false;
    };

    for (; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                    after_quote = true;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == ',') {
            rec.fields.push_back(std::move(field));
            field.clear();
            after_quote = false;
            field_started = true;
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            continue;
        } else if (c == '\n') {
            end_record();
            ++line;
            rec.line = line;
        } else if (c == '"') {
            if (!field.empty() || after_quote) throw ParseError("unexpected quote inside unquoted field", line);
            in_quotes = true;
            field_started = true;
        } else {
            if (after_quote) throw ParseError("characters after closing quote", line);
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) throw ParseError("unterminated quoted field", rec.line);
    if (!field.empty() || !rec.fields.empty() || field_started) end_record();
    return out;
}

std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace llmkt::data::csv
