#include "qadapt/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

double recall_at_k(const std::vector<std::string>& ranking, const std::set<std::string>& relevant,
                   std::size_t k) {
    if (k == 0) throw ContractError("recall@k needs k >= 1");
    if (relevant.empty()) throw ContractError("recall@k undefined without relevant documents");
    const std::size_t depth = std::min(k, ranking.size());
    std::size_t hits = 0;
    std::set<std::string> counted;
    for (std::size_t i = 0; i < depth; ++i) {
        if (relevant.count(ranking[i]) && counted.insert(ranking[i]).second) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const std::vector<std::string>& ranking, const std::map<std::string, int>& grades,
                 std::size_t k) {
    if (k == 0) throw ContractError("ndcg@k needs k >= 1");
    std::vector<int> ideal;
    for (const auto& [id, g] : grades) {
        if (g > 0) ideal.push_back(g);
    }
    if (ideal.empty()) throw ContractError("ndcg@k undefined without relevant documents");
    std::sort(ideal.rbegin(), ideal.rend());

    double dcg = 0.0;
    const std::size_t depth = std::min(k, ranking.size());
    for (std::size_t i = 0; i < depth; ++i) {
        auto it = grades.find(ranking[i]);
        if (it != grades.end() && it->second > 0) dcg += it->second / std::log2(static_cast<double>(i) + 2.0);
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) {
        idcg += ideal[i] / std::log2(static_cast<double>(i) + 2.0);
    }
    return dcg / idcg;
}

std::vector<std::string> metric_names(const std::vector<std::size_t>& k_list) {
    std::vector<std::string> names;
    for (auto k : k_list) names.push_back("recall@" + std::to_string(k));
    for (auto k : k_list) names.push_back("ndcg@" + std::to_string(k));
    return names;
}

namespace {

std::vector<std::size_t> checked_k_list(std::vector<std::size_t> k_list) {
    if (k_list.empty()) throw ContractError("k list must not be empty");
    for (auto k : k_list) {
        if (k == 0) throw ContractError("k values must be >= 1");
    }
    return k_list;
}

}  // namespace

EvalReport evaluate_rankings(const std::map<std::string, std::vector<std::string>>& rankings,
                             const RelevanceLabels& qrels, std::vector<std::size_t> k_list) {
    EvalReport report;
    report.k_list = checked_k_list(std::move(k_list));
    report.metrics = metric_names(report.k_list);
    for (const auto& [qid, ranking] : rankings) {
        auto it = qrels.find(qid);
        std::set<std::string> relevant;
        if (it != qrels.end()) {
            for (const auto& [doc, g] : it->second) {
                if (g > 0) relevant.insert(doc);
            }
        }
        if (relevant.empty()) {
            report.skipped.push_back(qid);
            continue;
        }
        auto& row = report.per_query[qid];
        for (auto k : report.k_list) {
            row["recall@" + std::to_string(k)] = recall_at_k(ranking, relevant, k);
            row["ndcg@" + std::to_string(k)] = ndcg_at_k(ranking, it->second, k);
        }
    }
    for (const auto& m : report.metrics) {
        double sum = 0.0;
        for (const auto& [qid, row] : report.per_query) sum += row.at(m);
        report.means[m] = report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
    }
    return report;
}

EvalReport evaluate(const AdapterHead* head, const EmbeddingMatrix& query_embs,
                    const EmbeddingMatrix& doc_store, const RelevanceLabels& qrels,
                    std::vector<std::size_t> k_list) {
    k_list = checked_k_list(std::move(k_list));
    const std::size_t depth = *std::max_element(k_list.begin(), k_list.end());
    const EmbeddingMatrix transformed = transform_queries(head, query_embs);
    const auto hits = top_k(transformed, doc_store, depth);
    std::map<std::string, std::vector<std::string>> rankings;
    for (std::size_t q = 0; q < transformed.count(); ++q) {
        auto& r = rankings[transformed.id(q)];
        for (const auto& h : hits[q]) r.push_back(h.id);
    }
    auto report = evaluate_rankings(rankings, qrels, std::move(k_list));
    report.head_id = head ? head_kind_name(*head) : "none";
    return report;
}

namespace {

std::string fmt(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

}  // namespace

std::string report_tsv(const EvalReport& report) {
    std::ostringstream out;
    out << "query_id";
    for (const auto& m : report.metrics) out << '\t' << m;
    out << '\n';
    for (const auto& [qid, row] : report.per_query) {
        out << qid;
        for (const auto& m : report.metrics) out << '\t' << fmt(row.at(m), 6);
        out << '\n';
    }
    out << "all";
    for (const auto& m : report.metrics) out << '\t' << fmt(report.means.at(m), 6);
    out << '\n';
    return out.str();
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["head"] = report.head_id;
    j["store"] = report.store_id;
    j["k_list"] = report.k_list;
    j["metrics"] = report.metrics;
    j["means"] = report.means;
    j["skipped"] = report.skipped;
    j["per_query"] = report.per_query;
    write_file_atomic(path, j.dump(2) + "\n");
}

EvalReport load_report(const std::filesystem::path& path) {
    try {
        auto j = Json::parse(read_file(path));
        EvalReport r;
        r.head_id = j.value("head", "");
        r.store_id = j.value("store", "");
        r.k_list = j.at("k_list").get<std::vector<std::size_t>>();
        r.metrics = j.at("metrics").get<std::vector<std::string>>();
        r.means = j.at("means").get<std::map<std::string, double>>();
        r.skipped = j.value("skipped", std::vector<std::string>{});
        r.per_query = j.at("per_query").get<std::map<std::string, std::map<std::string, double>>>();
        return r;
    } catch (const Json::exception& e) {
        throw FormatError(path.string() + ": bad evaluation report: " + e.what());
    }
}

ComparisonTable compare_reports(const std::vector<std::pair<std::string, EvalReport>>& reports) {
    ComparisonTable table;
    if (reports.empty()) return table;
    table.columns = reports.front().second.metrics;
    for (const auto& [name, r] : reports) {
        if (r.metrics != table.columns) {
            throw ContractError("report \"" + name + "\" has a different metric set");
        }
        std::vector<double> values;
        for (const auto& m : table.columns) values.push_back(r.means.at(m));
        table.rows.emplace_back(name, std::move(values));
    }
    std::stable_sort(table.rows.begin(), table.rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return table;
}

std::string ComparisonTable::tsv(int precision) const {
    std::ostringstream out;
    out << "variant";
    for (const auto& c : columns) out << '\t' << c;
    out << '\n';
    for (const auto& [name, values] : rows) {
        out << name;
        for (double v : values) out << '\t' << fmt(v, precision);
        out << '\n';
    }
    return out.str();
}

std::string ComparisonTable::markdown(int precision) const {
    std::ostringstream out;
    out << "| Variant |";
    for (const auto& c : columns) out << ' ' << c << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) out << "---|";
    out << '\n';
    for (const auto& [name, values] : rows) {
        out << "| " << name << " |";
        for (double v : values) out << ' ' << fmt(v, precision) << " |";
        out << '\n';
    }
    return out.str();
}

}  // namespace qadapt
