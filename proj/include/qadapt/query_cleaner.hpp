#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "qadapt/embedding_store.hpp"

namespace qadapt {

enum class Split { train, test, unassigned };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct QueryRecord {
    std::string id;
    std::string text;
    std::size_t word_count = 0;
    Split split = Split::unassigned;

    friend bool operator==(const QueryRecord&, const QueryRecord&) = default;
};

QueryRecord make_query(std::string id, std::string text, Split split = Split::unassigned);

/// Nearest-rank percentile (rank = ceil(p * n), 1-based, clamped to [1, n]).
std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double p);

/// Keeps queries whose word count is strictly above the `lower_pct`
/// percentile and strictly below the `1 - upper_pct` percentile. A zero
/// fraction disables that side. Order preserved.
std::vector<QueryRecord> length_filter(const std::vector<QueryRecord>& queries,
                                       double lower_pct = 0.25, double upper_pct = 0.25);

/// Returns a language code for a text; may throw.
using LanguageDetector = std::function<std::string(const std::string&)>;

/// Fraction of whitespace tokens that are common English function words.
double english_stopword_ratio(const std::string& text);

/// "en" when the stopword ratio reaches `threshold`, "und" otherwise.
LanguageDetector stopword_detector(double threshold = 0.15);

struct LanguageFilterResult {
    std::vector<QueryRecord> kept;
    std::vector<std::string> flagged;  // ids kept because the detector threw
};

LanguageFilterResult language_filter(const std::vector<QueryRecord>& queries,
                                     const LanguageDetector& detector = stopword_detector());

/// Byte-exact duplicate removal; first occurrence wins.
std::vector<QueryRecord> dedup(const std::vector<QueryRecord>& queries);

struct KMeansResult {
    std::vector<std::vector<double>> centroids;
    std::vector<std::size_t> assignment;
    std::size_t iterations = 0;
};

/// Lloyd iterations from a seeded k-means++ start.
KMeansResult kmeans(const EmbeddingMatrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 100, double tol = 1e-4);

/// One representative per k-means cluster (the member nearest its
/// centroid), returned sorted by query id. Embedding rows must follow the
/// query order.
std::vector<QueryRecord> diversity_select(const std::vector<QueryRecord>& queries,
                                          const EmbeddingMatrix& embeddings, std::size_t k,
                                          std::uint64_t seed);

/// Seeded split assignment: ceil(test_fraction * n) queries become test.
std::vector<QueryRecord> assign_splits(std::vector<QueryRecord> queries, double test_fraction,
                                       std::uint64_t seed);

struct StageCount {
    std::string stage;
    std::size_t input = 0;
    std::size_t kept = 0;
};

std::string stage_report_tsv(const std::vector<StageCount>& stages);

std::vector<QueryRecord> read_queries(const std::string& path);
void write_queries(const std::vector<QueryRecord>& queries, const std::string& path);

}  // namespace qadapt
