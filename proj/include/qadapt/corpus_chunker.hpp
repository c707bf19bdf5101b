#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace qadapt {

struct ChunkRecord {
    std::string id;      // doc_id + "#" + ord
    std::string doc_id;
    std::size_t ord = 0;
    std::string text;

    friend bool operator==(const ChunkRecord&, const ChunkRecord&) = default;
};

struct ChunkerOptions {
    std::size_t max_chars = 500;
    std::size_t overlap = 0;
    // Tried in order; "" means split between every character.
    std::vector<std::string> separators = {"\n\n", "\n", ". ", " ", ""};
};

/// Recursive character splitting. Lengths are counted in Unicode scalar
/// values. With overlap 0, chunks are disjoint source substrings in source
/// order; separators at chunk boundaries are dropped, separators inside a
/// merged chunk are kept. Whitespace-only chunks are skipped.
std::vector<ChunkRecord> split_document(const std::string& doc_id, const std::string& text,
                                        const ChunkerOptions& options = {});

/// Reads `{"doc_id","text"}` lines and writes one ChunkRecord line per
/// chunk, one document at a time. Returns the number of chunks written.
std::size_t chunk_corpus(std::istream& in, std::ostream& out, const ChunkerOptions& options = {},
                         const std::string& source = "<corpus>");

std::vector<ChunkRecord> read_chunks(const std::string& path);
std::string chunk_to_json_line(const ChunkRecord& c);

}  // namespace qadapt
