#include "qadapt/query_cleaner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    if (s == "unassigned" || s.empty()) return Split::unassigned;
    throw FormatError("unknown split \"" + s + "\"");
}

QueryRecord make_query(std::string id, std::string text, Split split) {
    QueryRecord q;
    q.id = std::move(id);
    q.word_count = word_count(text);
    q.text = std::move(text);
    q.split = split;
    return q;
}

std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double p) {
    if (values.empty()) throw ContractError("percentile of empty set");
    std::sort(values.begin(), values.end());
    auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size()) - 1e-12));
    rank = std::clamp<std::size_t>(rank, 1, values.size());
    return values[rank - 1];
}

std::vector<QueryRecord> length_filter(const std::vector<QueryRecord>& queries, double lower_pct,
                                       double upper_pct) {
    if (lower_pct < 0.0 || upper_pct < 0.0 || lower_pct >= 1.0 - upper_pct) {
        throw ContractError("length_filter needs 0 <= lower < 1 - upper <= 1");
    }
    if (queries.empty()) return {};
    std::vector<std::size_t> counts;
    counts.reserve(queries.size());
    for (const auto& q : queries) counts.push_back(q.word_count);

    const bool has_lower = lower_pct > 0.0;
    const bool has_upper = upper_pct > 0.0;
    const std::size_t lo = has_lower ? nearest_rank_percentile(counts, lower_pct) : 0;
    const std::size_t hi = has_upper ? nearest_rank_percentile(counts, 1.0 - upper_pct) : 0;

    std::vector<QueryRecord> kept;
    for (const auto& q : queries) {
        if (has_lower && q.word_count <= lo) continue;
        if (has_upper && q.word_count >= hi) continue;
        kept.push_back(q);
    }
    return kept;
}

double english_stopword_ratio(const std::string& text) {
    static const std::unordered_set<std::string> stopwords = {
        "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at",
        "be", "because", "been", "before", "but", "by", "can", "could", "did", "do", "does",
        "doing", "for", "from", "had", "has", "have", "how", "i", "if", "in", "into",
        "is", "it", "its", "just", "me", "more", "my", "no", "not", "of", "on", "one", "or",
        "our", "out", "should", "so", "some", "than", "that", "the", "their", "them", "then",
        "there", "these", "they", "this", "to", "up", "us", "was", "we", "were", "what",
        "when", "where", "which", "while", "who", "why", "will", "with", "would", "you", "your"};
    auto tokens = tokenize(text);
    if (tokens.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& t : tokens) hits += stopwords.count(t);
    return static_cast<double>(hits) / static_cast<double>(tokens.size());
}

LanguageDetector stopword_detector(double threshold) {
    return [threshold](const std::string& text) -> std::string {
        return english_stopword_ratio(text) >= threshold ? "en" : "und";
    };
}

LanguageFilterResult language_filter(const std::vector<QueryRecord>& queries,
                                     const LanguageDetector& detector) {
    LanguageFilterResult result;
    for (const auto& q : queries) {
        std::string lang;
        try {
            lang = detector(q.text);
        } catch (const std::exception&) {
            result.flagged.push_back(q.id);
            result.kept.push_back(q);
            continue;
        }
        if (lang == "en" || lang.rfind("en-", 0) == 0) result.kept.push_back(q);
    }
    return result;
}

std::vector<QueryRecord> dedup(const std::vector<QueryRecord>& queries) {
    std::unordered_set<std::string> seen;
    std::vector<QueryRecord> out;
    for (const auto& q : queries) {
        if (seen.insert(q.text).second) out.push_back(q);
    }
    return out;
}

namespace {

double sq_dist(std::span<const float> a, const std::vector<double>& c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - c[i];
        acc += d * d;
    }
    return acc;
}

std::vector<double> as_double(std::span<const float> r) { return {r.begin(), r.end()}; }

}  // namespace

KMeansResult kmeans(const EmbeddingMatrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter, double tol) {
    const std::size_t n = points.count();
    if (k == 0 || k > n) {
        throw ContractError("k-means needs 1 <= k <= n (k=" + std::to_string(k) +
                            ", n=" + std::to_string(n) + ")");
    }
    std::mt19937_64 rng(seed);
    KMeansResult res;

    // k-means++ seeding.
    std::vector<bool> chosen(n, false);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    res.centroids.push_back(as_double(points.row(first)));
    chosen[first] = true;
    std::vector<double> best(n);
    for (std::size_t i = 0; i < n; ++i) best[i] = sq_dist(points.row(i), res.centroids[0]);
    while (res.centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : best[i];
        std::size_t pick = n;
        if (total > 0.0) {
            double target = std::uniform_real_distribution<double>(0.0, total)(rng);
            double run = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (chosen[i]) continue;
                run += best[i];
                pick = i;
                if (run >= target && best[i] > 0.0) break;
            }
        } else {
            for (std::size_t i = 0; i < n && pick == n; ++i) {
                if (!chosen[i]) pick = i;
            }
        }
        chosen[pick] = true;
        res.centroids.push_back(as_double(points.row(pick)));
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], sq_dist(points.row(i), res.centroids.back()));
        }
    }

    const std::size_t dim = points.dim();
    res.assignment.assign(n, 0);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double bd = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d = sq_dist(points.row(i), res.centroids[c]);
                if (d < bd) {
                    bd = d;
                    res.assignment[i] = c;
                }
            }
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> sizes(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto r = points.row(i);
            auto& s = sums[res.assignment[i]];
            for (std::size_t j = 0; j < dim; ++j) s[j] += r[j];
            ++sizes[res.assignment[i]];
        }
        double shift = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (sizes[c] == 0) continue;  // empty cluster keeps its centroid
            double moved = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                double v = sums[c][j] / static_cast<double>(sizes[c]);
                moved += (v - res.centroids[c][j]) * (v - res.centroids[c][j]);
                res.centroids[c][j] = v;
            }
            shift = std::max(shift, std::sqrt(moved));
        }
        res.iterations = iter + 1;
        if (shift < tol) break;
    }
    return res;
}

std::vector<QueryRecord> diversity_select(const std::vector<QueryRecord>& queries,
                                          const EmbeddingMatrix& embeddings, std::size_t k,
                                          std::uint64_t seed) {
    if (embeddings.count() != queries.size()) {
        throw ContractError("diversity_select: " + std::to_string(embeddings.count()) +
                            " embeddings for " + std::to_string(queries.size()) + " queries");
    }
    if (k > queries.size()) {
        throw ContractError("diversity_select: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(queries.size()) + " queries");
    }
    auto km = kmeans(embeddings, k, seed);
    std::vector<std::size_t> rep(k, queries.size());
    std::vector<double> rep_dist(k, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        std::size_t c = km.assignment[i];
        double d = sq_dist(embeddings.row(i), km.centroids[c]);
        if (d < rep_dist[c]) {
            rep_dist[c] = d;
            rep[c] = i;
        }
    }
    std::vector<QueryRecord> out;
    for (std::size_t c = 0; c < k; ++c) {
        if (rep[c] < queries.size()) out.push_back(queries[rep[c]]);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

std::vector<QueryRecord> assign_splits(std::vector<QueryRecord> queries, double test_fraction,
                                       std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0) {
        throw ContractError("test fraction must lie in [0, 1]");
    }
    std::vector<std::size_t> order(queries.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    auto n_test = static_cast<std::size_t>(std::ceil(test_fraction * static_cast<double>(queries.size()) - 1e-12));
    for (std::size_t i = 0; i < order.size(); ++i) {
        queries[order[i]].split = i < n_test ? Split::test : Split::train;
    }
    return queries;
}

std::string stage_report_tsv(const std::vector<StageCount>& stages) {
    std::ostringstream out;
    out << "stage\tinput\tkept\tdropped\n";
    for (const auto& s : stages) {
        out << s.stage << '\t' << s.input << '\t' << s.kept << '\t' << (s.input - s.kept) << '\n';
    }
    return out.str();
}

std::vector<QueryRecord> read_queries(const std::string& path) {
    std::vector<QueryRecord> out;
    for_each_jsonl(std::filesystem::path(path), [&](const Json& obj, std::size_t line) {
        Split split = Split::unassigned;
        if (auto it = obj.find("split"); it != obj.end() && it->is_string()) {
            split = parse_split(it->get<std::string>());
        }
        out.push_back(make_query(json_string(obj, "id", path, line),
                                 json_string(obj, "text", path, line), split));
    });
    return out;
}

void write_queries(const std::vector<QueryRecord>& queries, const std::string& path) {
    std::string body;
    for (const auto& q : queries) {
        nlohmann::ordered_json j;
        j["id"] = q.id;
        j["text"] = q.text;
        j["word_count"] = q.word_count;
        j["split"] = to_string(q.split);
        body += j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n";
    }
    write_file_atomic(path, body);
}

}  // namespace qadapt
