#include "qadapt/relevance.hpp"

#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

RunRanking make_run(const std::string& retriever, const std::vector<std::string>& query_ids,
                    const std::vector<HitList>& hits) {
    if (query_ids.size() != hits.size()) throw ContractError("make_run: query/hit count mismatch");
    RunRanking run;
    run.retriever = retriever;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        auto& list = run.queries[query_ids[i]];
        for (const auto& h : hits[i]) list.push_back({h.id, h.score});
    }
    return run;
}

void validate_run(const RunRanking& run) {
    for (const auto& [qid, list] : run.queries) {
        std::unordered_set<std::string> seen;
        for (std::size_t i = 0; i < list.size(); ++i) {
            if (!seen.insert(list[i].id).second) {
                throw ContractError("run " + run.retriever + ", query " + qid + ": duplicate doc " +
                                    list[i].id);
            }
            if (i > 0 && list[i].score > list[i - 1].score) {
                throw ContractError("run " + run.retriever + ", query " + qid +
                                    ": scores increase at rank " + std::to_string(i + 1));
            }
        }
    }
}

void write_trec_run(const RunRanking& run, const std::filesystem::path& path) {
    std::string body;
    char score[64];
    for (const auto& [qid, list] : run.queries) {
        for (std::size_t i = 0; i < list.size(); ++i) {
            std::snprintf(score, sizeof score, "%.9g", list[i].score);
            body += qid + " Q0 " + list[i].id + " " + std::to_string(i + 1) + " " + score + " " +
                    run.retriever + "\n";
        }
    }
    write_file_atomic(path, body);
}

RunRanking read_trec_run(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    RunRanking run;
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::vector<std::pair<std::size_t, RankedDoc>>> staged;
    while (std::getline(in, line)) {
        ++line_no;
        auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 6) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": expected 6 fields in TREC run line");
        }
        std::size_t rank;
        double score;
        try {
            rank = std::stoul(f[3]);
            score = std::stod(f[4]);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad rank or score");
        }
        if (run.retriever.empty()) run.retriever = f[5];
        staged[f[0]].push_back({rank, {f[2], score}});
    }
    for (auto& [qid, entries] : staged) {
        std::stable_sort(entries.begin(), entries.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& list = run.queries[qid];
        for (auto& e : entries) list.push_back(std::move(e.second));
    }
    if (run.retriever.empty()) run.retriever = path.stem().string();
    return run;
}

void write_trec_qrels(const RelevanceLabels& qrels, const std::filesystem::path& path) {
    std::string body;
    for (const auto& [qid, docs] : qrels) {
        for (const auto& [doc, grade] : docs) {
            if (grade > 0) body += qid + " 0 " + doc + " " + std::to_string(grade) + "\n";
        }
    }
    write_file_atomic(path, body);
}

RelevanceLabels read_trec_qrels(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    RelevanceLabels qrels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto f = split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 4) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": expected 4 fields in qrels line");
        }
        int grade;
        try {
            grade = std::stoi(f[3]);
        } catch (const std::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad grade");
        }
        if (grade > 0) qrels[f[0]][f[2]] = grade;
    }
    return qrels;
}

std::size_t count_pairs(const RelevanceLabels& qrels) {
    std::size_t n = 0;
    for (const auto& [q, docs] : qrels) n += docs.size();
    return n;
}

}  // namespace qadapt
