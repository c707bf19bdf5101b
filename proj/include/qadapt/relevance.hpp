#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qadapt/embedding_store.hpp"

namespace qadapt {

/// query id -> chunk id -> grade. Only positive grades are stored.
using RelevanceLabels = std::map<std::string, std::map<std::string, int>>;

struct RankedDoc {
    std::string id;
    double score = 0.0;

    friend bool operator==(const RankedDoc&, const RankedDoc&) = default;
};

/// One retriever's ranked lists, keyed by query id. Position i holds rank i+1.
struct RunRanking {
    std::string retriever;
    std::map<std::string, std::vector<RankedDoc>> queries;

    friend bool operator==(const RunRanking&, const RunRanking&) = default;
};

/// Builds a run from per-query search hits; `query_ids[i]` names `hits[i]`.
RunRanking make_run(const std::string& retriever, const std::vector<std::string>& query_ids,
                    const std::vector<HitList>& hits);

/// ContractError unless every list has unique ids and non-increasing scores.
void validate_run(const RunRanking& run);

/// TREC run lines: `qid Q0 docid rank score tag`.
void write_trec_run(const RunRanking& run, const std::filesystem::path& path);
RunRanking read_trec_run(const std::filesystem::path& path);

/// TREC qrels lines: `qid 0 docid rel`. Zero grades are dropped on read.
void write_trec_qrels(const RelevanceLabels& qrels, const std::filesystem::path& path);
RelevanceLabels read_trec_qrels(const std::filesystem::path& path);

std::size_t count_pairs(const RelevanceLabels& qrels);

}  // namespace qadapt
