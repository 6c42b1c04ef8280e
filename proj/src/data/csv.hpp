// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace llmkt::data::csv {

struct Record {
    std::vector<std::string> fields;
    std::size_t line = 0;  // 1-based line where the record starts
};

/// RFC 4180 reader: quoted fields may contain separators, doubled quotes and
/// newlines. Blank lines are skipped. Throws ParseError on unterminated quotes
/// or stray characters after a closing quote.
std::vector<Record> read(const std::filesystem::path& path);

std::string quote(const std::string& field);

}  // namespace llmkt::data::csv
