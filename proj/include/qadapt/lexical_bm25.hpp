#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qadapt/corpus_chunker.hpp"
#include "qadapt/embedding_store.hpp"

namespace qadapt {

struct Posting {
    std::size_t doc;  // index into Bm25Index::doc_ids
    std::size_t tf;

    friend bool operator==(const Posting&, const Posting&) = default;
};

/// Inverted index with BM25 statistics. Documents are referenced by their
/// position in `doc_ids`; `doc_lengths` is parallel to it.
struct Bm25Index {
    double k1 = 1.2;
    double b = 0.75;
    std::vector<std::string> doc_ids;
    std::vector<std::size_t> doc_lengths;
    double avg_doc_len = 0.0;
    std::map<std::string, std::vector<Posting>> postings;  // sorted by doc

    std::size_t n_docs() const noexcept { return doc_ids.size(); }
    std::size_t doc_freq(const std::string& term) const;

    friend bool operator==(const Bm25Index&, const Bm25Index&) = default;
};

/// Tokenizes with `tokenize` (lowercase alphanumeric runs). ContractError
/// on an empty corpus or a repeated chunk id.
Bm25Index build_index(const std::vector<ChunkRecord>& chunks, double k1 = 1.2, double b = 0.75);

/// ln((N - df + 0.5) / (df + 0.5) + 1)
double bm25_idf(std::size_t n_docs, std::size_t df);

/// Top-k by BM25 score, ties by ascending id. Documents sharing no term
/// with the query are never returned.
HitList bm25_search(const Bm25Index& index, const std::string& query, std::size_t k);

void save_index(const Bm25Index& index, const std::filesystem::path& path);
Bm25Index load_index(const std::filesystem::path& path);

}  // namespace qadapt
