#include "qadapt/text_io.hpp"

#include <cctype>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "qadapt/errors.hpp"

namespace qadapt {

void for_each_jsonl(std::istream& in, const std::string& source,
                    const std::function<void(const Json&, std::size_t)>& fn) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Json obj;
        try {
            obj = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": malformed JSON line");
        }
        if (!obj.is_object()) {
            throw FormatError(source + ":" + std::to_string(line_no) + ": expected a JSON object");
        }
        fn(obj, line_no);
    }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn) {
    std::ifstream in(path);
    if (!in) throw StorageError(path.string(), "cannot open for reading");
    for_each_jsonl(in, path.string(), fn);
}

std::string json_string(const Json& obj, const char* key, const std::string& source,
                        std::size_t line) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
        throw FormatError(source + ":" + std::to_string(line) + ": missing string field \"" +
                          key + "\"");
    }
    return it->get<std::string>();
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError(path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw StorageError(tmp.string(), "cannot open for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw StorageError(tmp.string(), "write failed");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw StorageError(path.string(), "rename failed: " + ec.message());
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("internal", "SHA-256 digest failed");
    }
    std::ostringstream ss;
    ss << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) ss << std::setw(2) << static_cast<int>(digest[i]);
    return ss.str();
}

namespace {

std::size_t utf8_seq_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xE) return 3;
    if ((lead >> 3) == 0x1E) return 4;
    return 1;
}

std::size_t next_scalar(std::string_view s, std::size_t pos) {
    std::size_t len = utf8_seq_len(static_cast<unsigned char>(s[pos]));
    if (pos + len > s.size()) return pos + 1;
    for (std::size_t i = 1; i < len; ++i) {
        if ((static_cast<unsigned char>(s[pos + i]) & 0xC0) != 0x80) return pos + 1;
    }
    return pos + len;
}

}  // namespace

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < s.size(); pos = next_scalar(s, pos)) ++n;
    return n;
}

std::size_t utf8_offset(std::string_view s, std::size_t n) {
    std::size_t pos = 0;
    while (n > 0 && pos < s.size()) {
        pos = next_scalar(s, pos);
        --n;
    }
    return pos;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (c >= 0x80 || std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) out.emplace_back(s.substr(start, i - start));
    }
    return out;
}

std::size_t word_count(std::string_view text) { return split_ws(text).size(); }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

}  // namespace qadapt
