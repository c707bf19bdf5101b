#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace qadapt {

using Json = nlohmann::json;

// Invokes `fn(object, line_number)` for every non-blank line of a JSONL
// stream. Line numbers are 1-based. Malformed lines raise FormatError
// naming `source` and the line.
void for_each_jsonl(std::istream& in, const std::string& source,
                    const std::function<void(const Json&, std::size_t)>& fn);
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

// Required string field; FormatError if absent or not a string.
std::string json_string(const Json& obj, const char* key, const std::string& source,
                        std::size_t line);

std::string read_file(const std::filesystem::path& path);

// Writes via a temporary sibling and rename, so readers never observe a
// half-written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);

// Number of Unicode scalar values in a UTF-8 string. Invalid bytes count as
// one scalar each.
std::size_t utf8_length(std::string_view s);

// Byte offset of the `n`-th scalar (clamped to s.size()).
std::size_t utf8_offset(std::string_view s, std::size_t n);

// Lowercased runs of ASCII alphanumerics. Bytes >= 0x80 are kept inside
// tokens so non-ASCII words survive as opaque terms.
std::vector<std::string> tokenize(std::string_view text);

// Whitespace-separated word count.
std::size_t word_count(std::string_view text);

std::string trim(std::string_view s);
std::vector<std::string> split_ws(std::string_view s);

}  // namespace qadapt
