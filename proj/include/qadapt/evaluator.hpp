#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "qadapt/adapter_heads.hpp"
#include "qadapt/embedding_store.hpp"
#include "qadapt/relevance.hpp"

namespace qadapt {

/// |top-k ∩ relevant| / |relevant|. ContractError for k == 0 or an empty
/// relevant set.
double recall_at_k(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                   std::size_t k);

/// DCG@k / IDCG@k with gain = grade and discount log2(rank + 1).
/// ContractError when no grade is positive.
double ndcg_at_k(const std::vector<std::string>& ranking, const std::map<std::string, int>& grades,
                 std::size_t k);

struct EvalReport {
    std::vector<std::size_t> k_list;
    // Column names in order: recall@k for each k, then ndcg@k for each k.
    std::vector<std::string> metrics;
    std::map<std::string, std::map<std::string, double>> per_query;
    std::map<std::string, double> means;
    std::vector<std::string> skipped;  // queries without relevant chunks
    std::string head_id;
    std::string store_id;
    std::size_t evaluated() const noexcept { return per_query.size(); }
};

std::vector<std::string> metric_names(const std::vector<std::size_t>& k_list);

/// Metrics from precomputed rankings (query id -> ranked chunk ids).
EvalReport evaluate_rankings(const std::map<std::string, std::vector<std::string>>& rankings,
                             const RelevanceLabels& qrels, std::vector<std::size_t> k_list);

/// Transforms queries through `head` (null = base model), re-normalizes,
/// ranks the frozen store to depth max(k_list) and scores every query
/// present in `qrels`. Queries absent from qrels are listed as skipped.
EvalReport evaluate(const AdapterHead* head, const EmbeddingMatrix& query_embs,
                    const EmbeddingMatrix& doc_store, const RelevanceLabels& qrels,
                    std::vector<std::size_t> k_list = {10});

/// Per-query TSV with a trailing `all` row of means.
std::string report_tsv(const EvalReport& report);

void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

struct ComparisonTable {
    std::vector<std::string> columns;  // metric names
    std::vector<std::pair<std::string, std::vector<double>>> rows;  // sorted by variant name

    std::string tsv(int precision = 3) const;
    std::string markdown(int precision = 3) const;
};

/// ContractError when the reports do not share one metric set.
ComparisonTable compare_reports(const std::vector<std::pair<std::string, EvalReport>>& reports);

}  // namespace qadapt
