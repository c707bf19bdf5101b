#include "qadapt/lexical_bm25.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

std::size_t Bm25Index::doc_freq(const std::string& term) const {
    auto it = postings.find(term);
    return it == postings.end() ? 0 : it->second.size();
}

Bm25Index build_index(const std::vector<ChunkRecord>& chunks, double k1, double b) {
    if (chunks.empty()) throw ContractError("cannot build BM25 index over an empty corpus");
    Bm25Index index;
    index.k1 = k1;
    index.b = b;
    std::unordered_set<std::string> seen;
    std::size_t total = 0;
    for (const auto& c : chunks) {
        if (!seen.insert(c.id).second) throw ContractError("duplicate chunk id in corpus: " + c.id);
        const std::size_t doc = index.doc_ids.size();
        index.doc_ids.push_back(c.id);
        auto tokens = tokenize(c.text);
        index.doc_lengths.push_back(tokens.size());
        total += tokens.size();
        std::map<std::string, std::size_t> tf;
        for (auto& t : tokens) ++tf[t];
        for (auto& [term, count] : tf) index.postings[term].push_back({doc, count});
    }
    index.avg_doc_len = static_cast<double>(total) / static_cast<double>(index.n_docs());
    return index;
}

double bm25_idf(std::size_t n_docs, std::size_t df) {
    const double n = static_cast<double>(n_docs), d = static_cast<double>(df);
    return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
}

HitList bm25_search(const Bm25Index& index, const std::string& query, std::size_t k) {
    if (k == 0) throw ContractError("bm25_search requires k >= 1");
    std::unordered_map<std::size_t, double> scores;
    // Sum over distinct query terms; repeating a word does not boost it.
    auto tokens = tokenize(query);
    std::sort(tokens.begin(), tokens.end());
    tokens.erase(std::unique(tokens.begin(), tokens.end()), tokens.end());
    for (const auto& term : tokens) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        const double idf = bm25_idf(index.n_docs(), it->second.size());
        for (const auto& p : it->second) {
            const double len = static_cast<double>(index.doc_lengths[p.doc]);
            const double tf = static_cast<double>(p.tf);
            const double norm = index.k1 * (1.0 - index.b + index.b * len / index.avg_doc_len);
            scores[p.doc] += idf * tf / (tf + norm);
        }
    }
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [doc, score] : scores) ranked.emplace_back(score, doc);
    auto better = [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return index.doc_ids[a.second] < index.doc_ids[b.second];
    };
    const std::size_t keep = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), better);
    HitList hits;
    for (std::size_t i = 0; i < keep; ++i) {
        hits.push_back({index.doc_ids[ranked[i].second], static_cast<float>(ranked[i].first), i + 1});
    }
    return hits;
}

void save_index(const Bm25Index& index, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["format"] = "qadapt-bm25-v1";
    j["k1"] = index.k1;
    j["b"] = index.b;
    j["doc_ids"] = index.doc_ids;
    j["doc_lengths"] = index.doc_lengths;
    nlohmann::ordered_json postings = nlohmann::ordered_json::object();
    for (const auto& [term, list] : index.postings) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& p : list) arr.push_back({p.doc, p.tf});
        postings[term] = std::move(arr);
    }
    j["postings"] = std::move(postings);
    write_file_atomic(path, j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
}

Bm25Index load_index(const std::filesystem::path& path) {
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::exception&) {
        throw FormatError(path.string() + ": not a JSON BM25 index");
    }
    if (j.value("format", "") != "qadapt-bm25-v1") {
        throw FormatError(path.string() + ": unknown BM25 index format");
    }
    try {
        Bm25Index index;
        index.k1 = j.at("k1").get<double>();
        index.b = j.at("b").get<double>();
        index.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
        index.doc_lengths = j.at("doc_lengths").get<std::vector<std::size_t>>();
        if (index.doc_ids.empty() || index.doc_ids.size() != index.doc_lengths.size()) {
            throw FormatError(path.string() + ": inconsistent document tables");
        }
        for (const auto& [term, list] : j.at("postings").items()) {
            auto& out = index.postings[term];
            for (const auto& p : list) {
                Posting posting{p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()};
                if (posting.doc >= index.doc_ids.size()) {
                    throw FormatError(path.string() + ": posting references unknown document");
                }
                out.push_back(posting);
            }
        }
        const double total = std::accumulate(index.doc_lengths.begin(), index.doc_lengths.end(), 0.0);
        index.avg_doc_len = total / static_cast<double>(index.n_docs());
        return index;
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace qadapt
