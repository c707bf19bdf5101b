#include "qadapt/pool_builder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

std::size_t CandidatePool::pair_count() const {
    std::size_t n = 0;
    for (const auto& [q, chunks] : queries) n += chunks.size();
    return n;
}

CandidatePool build_pool(const std::vector<RunRanking>& runs, std::size_t depth) {
    if (runs.empty()) throw ContractError("build_pool needs at least one run");
    if (depth == 0) throw ContractError("pool depth must be positive");

    std::set<std::string> all;
    for (const auto& run : runs) {
        validate_run(run);
        for (const auto& [q, _] : run.queries) all.insert(q);
    }
    std::string missing;
    for (const auto& run : runs) {
        std::vector<std::string> lacks;
        for (const auto& q : all) {
            if (!run.queries.count(q)) lacks.push_back(q);
        }
        if (lacks.empty()) continue;
        missing += (missing.empty() ? "" : "; ") + run.retriever + " lacks";
        for (std::size_t i = 0; i < lacks.size() && i < 10; ++i) missing += " " + lacks[i];
        if (lacks.size() > 10) missing += " (+" + std::to_string(lacks.size() - 10) + " more)";
    }
    if (!missing.empty()) throw ContractError("runs cover different query sets: " + missing);

    CandidatePool pool;
    for (const auto& run : runs) {
        for (const auto& [q, ranked] : run.queries) {
            auto& chunks = pool.queries[q];
            const std::size_t n = std::min(depth, ranked.size());
            for (std::size_t i = 0; i < n; ++i) {
                auto [it, fresh] = chunks[ranked[i].id].emplace(run.retriever, i + 1);
                if (!fresh) it->second = std::min(it->second, i + 1);
            }
        }
    }
    return pool;
}

namespace {

template <class Retrieved>
double mean_recall(const RelevanceLabels& qrels, Retrieved&& retrieved) {
    double sum = 0.0;
    std::size_t counted = 0;
    for (const auto& [q, rel] : qrels) {
        if (rel.empty()) continue;
        std::size_t hits = 0;
        for (const auto& [chunk, grade] : rel) {
            if (grade > 0 && retrieved(q, chunk)) ++hits;
        }
        sum += static_cast<double>(hits) / static_cast<double>(rel.size());
        ++counted;
    }
    if (counted == 0) throw ContractError("recall needs qrels with at least one relevant chunk");
    return 100.0 * sum / static_cast<double>(counted);
}

}  // namespace

double individual_recall(const RunRanking& run, const RelevanceLabels& qrels, std::size_t depth) {
    if (depth == 0) throw ContractError("recall depth must be positive");
    std::map<std::string, std::set<std::string>> top;
    for (const auto& [q, ranked] : run.queries) {
        auto& s = top[q];
        for (std::size_t i = 0; i < ranked.size() && i < depth; ++i) s.insert(ranked[i].id);
    }
    return mean_recall(qrels, [&](const std::string& q, const std::string& c) {
        auto it = top.find(q);
        return it != top.end() && it->second.count(c) > 0;
    });
}

double pool_recall(const CandidatePool& pool, const RelevanceLabels& qrels) {
    return mean_recall(qrels, [&](const std::string& q, const std::string& c) {
        auto it = pool.queries.find(q);
        return it != pool.queries.end() && it->second.count(c) > 0;
    });
}

std::map<std::string, double> leave_one_out(const std::vector<RunRanking>& runs, const RelevanceLabels& qrels,
                                            std::size_t depth) {
    if (runs.size() < 2) throw ContractError("leave_one_out needs at least two runs");
    std::set<std::string> names;
    for (const auto& r : runs) {
        if (!names.insert(r.retriever).second) throw ContractError("duplicate retriever name " + r.retriever);
    }
    std::map<std::string, double> out;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::vector<RunRanking> rest;
        for (std::size_t j = 0; j < runs.size(); ++j) {
            if (j != i) rest.push_back(runs[j]);
        }
        out[runs[i].retriever] = pool_recall(build_pool(rest, depth), qrels);
    }
    return out;
}

std::vector<std::string> sample_for_validation(const RelevanceLabels& qrels, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ContractError("validation fraction must be in (0, 1]");
    std::vector<std::string> ids;
    for (const auto& [q, _] : qrels) ids.push_back(q);
    const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size()) - 1e-9));
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(std::min(n, ids.size()));
    std::sort(ids.begin(), ids.end());
    return ids;
}

void write_validation_sheet(const RelevanceLabels& qrels, const std::vector<std::string>& query_ids,
                            const std::map<std::string, std::string>& query_texts,
                            const std::map<std::string, std::string>& chunk_texts,
                            const std::filesystem::path& path) {
    std::string out;
    for (const auto& q : query_ids) {
        auto rel = qrels.find(q);
        if (rel == qrels.end()) continue;
        auto qt = query_texts.find(q);
        if (qt == query_texts.end()) throw ContractError("no text for query " + q);
        for (const auto& [chunk, grade] : rel->second) {
            auto ct = chunk_texts.find(chunk);
            if (ct == chunk_texts.end()) throw ContractError("no text for chunk " + chunk);
            nlohmann::ordered_json line;
            line["query_id"] = q;
            line["query"] = qt->second;
            line["chunk_id"] = chunk;
            line["chunk"] = ct->second;
            line["label"] = grade;
            out += line.dump() + "\n";
        }
    }
    write_file_atomic(path, out);
}

void write_pool(const CandidatePool& pool, const std::filesystem::path& path) {
    std::string out;
    for (const auto& [q, chunks] : pool.queries) {
        for (const auto& [chunk, prov] : chunks) {
            auto contributors = nlohmann::ordered_json::array();
            for (const auto& [retriever, rank] : prov) {
                nlohmann::ordered_json c;
                c["retriever"] = retriever;
                c["rank"] = rank;
                contributors.push_back(std::move(c));
            }
            nlohmann::ordered_json line;
            line["query_id"] = q;
            line["chunk_id"] = chunk;
            line["contributors"] = std::move(contributors);
            out += line.dump() + "\n";
        }
    }
    write_file_atomic(path, out);
}

CandidatePool read_pool(const std::filesystem::path& path) {
    CandidatePool pool;
    const std::string source = path.string();
    for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
        const auto q = json_string(obj, "query_id", source, line);
        const auto c = json_string(obj, "chunk_id", source, line);
        auto it = obj.find("contributors");
        if (it == obj.end() || !it->is_array() || it->empty()) {
            throw FormatError(source + ":" + std::to_string(line) + ": missing contributors");
        }
        auto& prov = pool.queries[q][c];
        if (!prov.empty()) throw FormatError(source + ":" + std::to_string(line) + ": duplicate pair " + q + " " + c);
        for (const auto& contrib : *it) {
            try {
                prov[contrib.at("retriever").get<std::string>()] = contrib.at("rank").get<std::size_t>();
            } catch (const Json::exception& e) {
                throw FormatError(source + ":" + std::to_string(line) + ": " + e.what());
            }
        }
    });
    return pool;
}

std::string recall_table_tsv(const std::string& key_header, const std::string& value_header,
                             const std::map<std::string, double>& values) {
    std::ostringstream out;
    out << key_header << '\t' << value_header << '\n';
    char buf[32];
    for (const auto& [k, v] : values) {
        std::snprintf(buf, sizeof buf, "%.2f", v);
        out << k << '\t' << buf << '\n';
    }
    return out.str();
}

}  // namespace qadapt
