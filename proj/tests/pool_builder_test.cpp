#include "qadapt/pool_builder.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"
#include "test_util.hpp"

using namespace qadapt;

namespace {

RunRanking run_of(const std::string& name, std::map<std::string, std::vector<std::string>> lists) {
    RunRanking r;
    r.retriever = name;
    for (auto& [q, ids] : lists) {
        double score = 100.0;
        for (auto& id : ids) r.queries[q].push_back({id, score--});
    }
    return r;
}

std::vector<RunRanking> random_runs(std::size_t n_runs, std::size_t n_queries, std::size_t depth,
                                    std::size_t corpus, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> chunks;
    corpus = std::max(corpus, n_queries + depth * 3 + 20);
    for (std::size_t i = 0; i < corpus; ++i) chunks.push_back("c" + std::to_string(i));
    std::vector<RunRanking> runs;
    for (std::size_t r = 0; r < n_runs; ++r) {
        std::map<std::string, std::vector<std::string>> lists;
        for (std::size_t q = 0; q < n_queries; ++q) {
            // Draw from a query-specific window so runs overlap partially.
            std::vector<std::string> window(chunks.begin() + q, chunks.begin() + q + depth * 3 + 20);
            std::shuffle(window.begin(), window.end(), rng);
            window.resize(depth + 20);
            lists["q" + std::to_string(q)] = window;
        }
        runs.push_back(run_of("r" + std::to_string(r), lists));
    }
    return runs;
}

}  // namespace

TEST(BuildPool, UnionWithProvenance) {
    auto a = run_of("A", {{"q", {"1", "2", "3"}}});
    auto b = run_of("B", {{"q", {"3", "4"}}});
    auto pool = build_pool({a, b}, 60);
    const auto& chunks = pool.queries.at("q");
    EXPECT_EQ(chunks.size(), 4u);
    EXPECT_EQ(chunks.at("3"), (Provenance{{"A", 3}, {"B", 1}}));
    EXPECT_EQ(chunks.at("1"), (Provenance{{"A", 1}}));
    EXPECT_EQ(pool.pair_count(), 4u);
}

TEST(BuildPool, DepthTruncates) {
    auto a = run_of("A", {{"q", {"1", "2", "3"}}});
    auto pool = build_pool({a}, 2);
    EXPECT_EQ(pool.queries.at("q").size(), 2u);
    EXPECT_FALSE(pool.queries.at("q").count("3"));
    EXPECT_THROW(build_pool({a}, 0), ContractError);
}

TEST(BuildPool, SevenRunsAtDepthSixtyStayInBounds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto runs = random_runs(7, 30, 60, 400, seed);
        auto pool = build_pool(runs, 60);
        ASSERT_EQ(pool.queries.size(), 30u);
        for (const auto& [q, chunks] : pool.queries) {
            EXPECT_GE(chunks.size(), 60u);
            EXPECT_LE(chunks.size(), 420u);
            std::set<std::string> expect;
            for (const auto& r : runs) {
                for (std::size_t i = 0; i < 60; ++i) expect.insert(r.queries.at(q)[i].id);
            }
            std::set<std::string> got;
            for (const auto& [c, _] : chunks) got.insert(c);
            EXPECT_EQ(got, expect);
        }
    }
}

TEST(BuildPool, IdempotentAndOrderInsensitive) {
    auto runs = random_runs(3, 5, 10, 50, 9);
    auto single = runs[0];
    auto tripled = build_pool({single, single, single}, 10);
    EXPECT_EQ(tripled, build_pool({single}, 10));
    auto forward = build_pool(runs, 10);
    std::reverse(runs.begin(), runs.end());
    EXPECT_EQ(build_pool(runs, 10), forward);
}

TEST(BuildPool, QuerySetMismatchNamesMissingQueries) {
    auto a = run_of("A", {{"q1", {"1"}}, {"q2", {"2"}}});
    auto b = run_of("B", {{"q1", {"1"}}});
    try {
        build_pool({a, b}, 5);
        FAIL();
    } catch (const ContractError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("B lacks q2"), std::string::npos) << msg;
    }
}

TEST(Recall, HandComputedSeventyFive) {
    auto run = run_of("A", {{"q1", {"a", "b", "x"}}, {"q2", {"c", "y"}}});
    RelevanceLabels qrels = {{"q1", {{"a", 1}, {"b", 1}}}, {"q2", {{"c", 1}, {"d", 1}}}};
    EXPECT_DOUBLE_EQ(individual_recall(run, qrels, 420), 75.0);
    EXPECT_DOUBLE_EQ(individual_recall(run, qrels, 1), 50.0);
    EXPECT_DOUBLE_EQ(individual_recall(run_of("A", {{"q1", {"x", "a"}}, {"q2", {"c"}}}), qrels, 1), 25.0);
}

TEST(Recall, EmptyQrelsAndEmptyQueries) {
    auto run = run_of("A", {{"q1", {"a"}}});
    EXPECT_THROW(individual_recall(run, {}, 420), ContractError);
    RelevanceLabels qrels = {{"q1", {{"a", 1}}}, {"q2", {}}};
    EXPECT_DOUBLE_EQ(individual_recall(run, qrels, 420), 100.0);
}

TEST(Recall, JudgeDerivedQrelsGiveFullPoolRecall) {
    auto runs = random_runs(7, 20, 60, 400, 4);
    auto pool = build_pool(runs, 60);
    std::mt19937_64 rng(4);
    RelevanceLabels qrels;
    for (const auto& [q, chunks] : pool.queries) {
        for (const auto& [c, _] : chunks) {
            if (rng() % 9 == 0) qrels[q][c] = 1;
        }
    }
    EXPECT_EQ(pool_recall(pool, qrels), 100.0);
    for (const auto& [name, recall] : leave_one_out(runs, qrels, 60)) EXPECT_LE(recall, 100.0) << name;
}

TEST(LeaveOneOut, UniqueContributorIsStrictlyLowest) {
    auto a = run_of("A", {{"q1", {"r1", "n1"}}, {"q2", {"r3", "n2"}}});
    auto b = run_of("B", {{"q1", {"r1", "n3"}}, {"q2", {"n4", "r3"}}});
    auto c = run_of("C", {{"q1", {"r2", "r1"}}, {"q2", {"r3"}}});
    RelevanceLabels qrels = {{"q1", {{"r1", 1}, {"r2", 1}}}, {"q2", {{"r3", 1}}}};
    auto loo = leave_one_out({a, b, c}, qrels, 10);
    EXPECT_DOUBLE_EQ(loo.at("A"), 100.0);
    EXPECT_DOUBLE_EQ(loo.at("B"), 100.0);
    EXPECT_DOUBLE_EQ(loo.at("C"), 75.0);
    EXPECT_THROW(leave_one_out({a}, qrels, 10), ContractError);
    EXPECT_THROW(leave_one_out({a, a}, qrels, 10), ContractError);
}

TEST(LeaveOneOut, DuplicatedRunIsRedundant) {
    auto runs = random_runs(2, 6, 10, 60, 2);
    auto copy = runs[0];
    copy.retriever = "copy";
    runs.push_back(copy);
    RelevanceLabels qrels;
    for (const auto& [q, ranked] : runs[1].queries) qrels[q][ranked[3].id] = 1;
    for (const auto& [q, ranked] : runs[0].queries) qrels[q][ranked[15].id] = 1;
    auto loo = leave_one_out(runs, qrels, 10);
    const double full = pool_recall(build_pool(runs, 10), qrels);
    EXPECT_EQ(loo.at("copy"), full);
    EXPECT_EQ(loo.at("r0"), full);
}

TEST(Validation, SampleSizesAndDeterminism) {
    RelevanceLabels qrels;
    for (int i = 0; i < 291; ++i) qrels["q" + std::to_string(i)]["c"] = 1;
    EXPECT_EQ(sample_for_validation(qrels, 0.1, 1).size(), 30u);
    EXPECT_EQ(sample_for_validation(qrels, 1.0, 1).size(), 291u);
    EXPECT_EQ(sample_for_validation(qrels, 0.1, 5), sample_for_validation(qrels, 0.1, 5));
    EXPECT_NE(sample_for_validation(qrels, 0.1, 5), sample_for_validation(qrels, 0.1, 6));
    RelevanceLabels ten;
    for (int i = 0; i < 10; ++i) ten["q" + std::to_string(i)]["c"] = 1;
    EXPECT_EQ(sample_for_validation(ten, 0.1, 0).size(), 1u);
    EXPECT_THROW(sample_for_validation(qrels, 0.0, 1), ContractError);
    EXPECT_THROW(sample_for_validation(qrels, 1.5, 1), ContractError);
}

TEST(Validation, SheetInlinesTexts) {
    auto dir = qadapt::testing::scratch_dir("validation_sheet");
    RelevanceLabels qrels = {{"q1", {{"c1", 1}, {"c2", 1}}}, {"q2", {{"c1", 1}}}};
    write_validation_sheet(qrels, {"q1"}, {{"q1", "reset password"}}, {{"c1", "one"}, {"c2", "two"}},
                           dir / "sheet.jsonl");
    std::vector<Json> lines;
    for_each_jsonl(dir / "sheet.jsonl", [&](const Json& obj, std::size_t) { lines.push_back(obj); });
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[1]["chunk"], "two");
    EXPECT_EQ(lines[0]["query"], "reset password");
    EXPECT_EQ(lines[0]["label"], 1);
}

TEST(PoolIo, RoundTripAndFormat) {
    auto dir = qadapt::testing::scratch_dir("pool_io");
    auto pool = build_pool(random_runs(3, 4, 8, 40, 1), 8);
    write_pool(pool, dir / "pool.jsonl");
    EXPECT_EQ(read_pool(dir / "pool.jsonl"), pool);
    const auto text = read_file(dir / "pool.jsonl");
    EXPECT_EQ(text.rfind("{\"query_id\":\"q0\",\"chunk_id\":", 0), 0u);
    EXPECT_NE(text.find("\"contributors\":[{\"retriever\":\"r"), std::string::npos);
}

TEST(Tables, TwoDecimalTsv) {
    EXPECT_EQ(recall_table_tsv("retriever", "recall", {{"bm25", 52.18}, {"dense", 82.475}}),
              "retriever\trecall\nbm25\t52.18\ndense\t82.47\n");
}
