#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qadapt/relevance.hpp"

namespace qadapt {

/// retriever name -> best (1-based) rank at which it returned the chunk.
using Provenance = std::map<std::string, std::size_t>;

/// Per query, the union of all depth-truncated runs with provenance.
struct CandidatePool {
    std::map<std::string, std::map<std::string, Provenance>> queries;

    std::size_t pair_count() const;
    friend bool operator==(const CandidatePool&, const CandidatePool&) = default;
};

/// Union of the top-`depth` entries of every run. All runs must cover the
/// same query set; otherwise ContractError lists what each run lacks.
CandidatePool build_pool(const std::vector<RunRanking>& runs, std::size_t depth);

/// Mean over queries with at least one relevant chunk of
/// |top-depth ∩ relevant| / |relevant|, as a percentage.
double individual_recall(const RunRanking& run, const RelevanceLabels& qrels, std::size_t depth = 420);

/// Same measure for a pool (every pooled chunk counts as retrieved).
double pool_recall(const CandidatePool& pool, const RelevanceLabels& qrels);

/// For each retriever, recall of the pool built from all other runs.
std::map<std::string, double> leave_one_out(const std::vector<RunRanking>& runs, const RelevanceLabels& qrels,
                                            std::size_t depth = 420);

/// Seeded uniform sample of ceil(fraction * |queries|) query ids, sorted.
std::vector<std::string> sample_for_validation(const RelevanceLabels& qrels, double fraction, std::uint64_t seed);

/// One JSONL line per labeled pair of the sampled queries with both texts
/// inlined, for manual review.
void write_validation_sheet(const RelevanceLabels& qrels, const std::vector<std::string>& query_ids,
                            const std::map<std::string, std::string>& query_texts,
                            const std::map<std::string, std::string>& chunk_texts,
                            const std::filesystem::path& path);

void write_pool(const CandidatePool& pool, const std::filesystem::path& path);
CandidatePool read_pool(const std::filesystem::path& path);

/// Two-column TSV, recall printed with two decimals.
std::string recall_table_tsv(const std::string& key_header, const std::string& value_header,
                             const std::map<std::string, double>& values);

}  // namespace qadapt
