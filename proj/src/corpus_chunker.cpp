#include "qadapt/corpus_chunker.hpp"

#include <cctype>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

namespace {

struct Span {
    std::size_t begin;  // byte offsets into the document
    std::size_t end;
    std::size_t len;    // scalar values
};

bool whitespace_only(std::string_view s) {
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

class Splitter {
public:
    Splitter(const std::string& text, const ChunkerOptions& opts) : text_(text), opts_(opts) {
        if (opts_.separators.empty()) opts_.separators = {""};
    }

    std::vector<Span> run() {
        std::vector<Span> out;
        Span whole{0, text_.size(), utf8_length(text_)};
        if (whole.len <= opts_.max_chars) {
            emit(whole, out);
        } else {
            split(whole, 0, out);
        }
        return out;
    }

private:
    std::size_t scalars(std::size_t b, std::size_t e) const {
        return utf8_length(std::string_view(text_).substr(b, e - b));
    }

    void emit(const Span& s, std::vector<Span>& out) const {
        if (s.end > s.begin && !whitespace_only(std::string_view(text_).substr(s.begin, s.end - s.begin))) {
            out.push_back(s);
        }
    }

    std::vector<Span> pieces(const Span& region, const std::string& sep) const {
        std::vector<Span> result;
        std::string_view view(text_);
        if (sep.empty()) {
            std::size_t pos = region.begin;
            while (pos < region.end) {
                std::size_t next = pos + utf8_offset(view.substr(pos, region.end - pos), 1);
                result.push_back({pos, next, 1});
                pos = next;
            }
            return result;
        }
        std::size_t pos = region.begin;
        while (pos <= region.end) {
            std::size_t hit = view.substr(0, region.end).find(sep, pos);
            std::size_t stop = (hit == std::string_view::npos) ? region.end : hit;
            if (stop > pos) result.push_back({pos, stop, scalars(pos, stop)});
            if (hit == std::string_view::npos) break;
            pos = hit + sep.size();
        }
        return result;
    }

    std::size_t pick_separator(const Span& region, std::size_t from) const {
        std::string_view view = std::string_view(text_).substr(region.begin, region.end - region.begin);
        for (std::size_t i = from; i < opts_.separators.size(); ++i) {
            const auto& sep = opts_.separators[i];
            if (sep.empty() || view.find(sep) != std::string_view::npos) return i;
        }
        return opts_.separators.size();  // none left: hard split
    }

    void split(const Span& region, std::size_t sep_from, std::vector<Span>& out) {
        std::size_t idx = pick_separator(region, sep_from);
        const std::string sep = idx < opts_.separators.size() ? opts_.separators[idx] : std::string();
        auto parts = pieces(region, sep);

        std::vector<Span> current;  // pieces inside the chunk being built
        std::size_t current_len = 0;
        auto current_span = [&]() {
            return Span{current.front().begin, current.back().end, current_len};
        };

        for (const auto& p : parts) {
            if (p.len > opts_.max_chars) {
                if (!current.empty()) emit(current_span(), out);
                current.clear();
                split(p, idx + 1, out);
                continue;
            }
            if (current.empty()) {
                current.push_back(p);
                current_len = p.len;
                continue;
            }
            std::size_t merged = current_len + scalars(current.back().end, p.begin) + p.len;
            if (merged <= opts_.max_chars) {
                current.push_back(p);
                current_len = merged;
                continue;
            }
            emit(current_span(), out);
            std::vector<Span> carried;
            if (opts_.overlap > 0) {
                // Keep trailing pieces that fit in the overlap budget and
                // still leave room for the incoming piece.
                for (auto it = current.rbegin(); it != current.rend(); ++it) {
                    std::size_t tail = scalars(it->begin, current.back().end);
                    if (tail > opts_.overlap || scalars(it->begin, p.end) > opts_.max_chars) break;
                    carried.insert(carried.begin(), *it);
                }
            }
            current = std::move(carried);
            current.push_back(p);
            current_len = scalars(current.front().begin, p.end);
        }
        if (!current.empty()) emit(current_span(), out);
    }

    const std::string& text_;
    ChunkerOptions opts_;
};

}  // namespace

std::vector<ChunkRecord> split_document(const std::string& doc_id, const std::string& text,
                                        const ChunkerOptions& options) {
    if (options.max_chars == 0) throw ContractError("max_chars must be >= 1");
    std::vector<ChunkRecord> chunks;
    if (text.empty()) return chunks;
    Splitter splitter(text, options);
    for (const auto& span : splitter.run()) {
        ChunkRecord c;
        c.doc_id = doc_id;
        c.ord = chunks.size();
        c.id = doc_id + "#" + std::to_string(c.ord);
        c.text = text.substr(span.begin, span.end - span.begin);
        chunks.push_back(std::move(c));
    }
    return chunks;
}

std::string chunk_to_json_line(const ChunkRecord& c) {
    nlohmann::ordered_json j;
    j["id"] = c.id;
    j["doc_id"] = c.doc_id;
    j["ord"] = c.ord;
    j["text"] = c.text;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
}

std::size_t chunk_corpus(std::istream& in, std::ostream& out, const ChunkerOptions& options,
                         const std::string& source) {
    std::size_t written = 0;
    for_each_jsonl(in, source, [&](const Json& obj, std::size_t line) {
        auto doc_id = json_string(obj, "doc_id", source, line);
        auto text = json_string(obj, "text", source, line);
        for (const auto& c : split_document(doc_id, text, options)) {
            out << chunk_to_json_line(c);
            ++written;
        }
    });
    if (!out) throw StorageError(source, "failed writing chunk stream");
    return written;
}

std::vector<ChunkRecord> read_chunks(const std::string& path) {
    std::vector<ChunkRecord> chunks;
    for_each_jsonl(std::filesystem::path(path), [&](const Json& obj, std::size_t line) {
        ChunkRecord c;
        c.id = json_string(obj, "id", path, line);
        c.doc_id = json_string(obj, "doc_id", path, line);
        c.text = json_string(obj, "text", path, line);
        if (auto it = obj.find("ord"); it != obj.end() && it->is_number_unsigned()) {
            c.ord = it->get<std::size_t>();
        }
        chunks.push_back(std::move(c));
    });
    return chunks;
}

}  // namespace qadapt
