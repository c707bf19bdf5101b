#include "qadapt/embedding_store.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <tuple>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"
#include "test_util.hpp"

using namespace qadapt;
using qadapt::testing::random_unit_matrix;
using qadapt::testing::scratch_dir;

namespace {

// Independent O(n*m) scorer: full sort of (score desc, id asc).
std::vector<std::vector<std::pair<std::string, double>>> reference_top_k(
    const EmbeddingMatrix& q, const EmbeddingMatrix& d, std::size_t k) {
    std::vector<std::vector<std::pair<std::string, double>>> out;
    for (std::size_t i = 0; i < q.count(); ++i) {
        std::vector<std::pair<std::string, double>> all;
        for (std::size_t j = 0; j < d.count(); ++j) {
            long double s = 0;
            for (std::size_t t = 0; t < q.dim(); ++t) s += (long double)q.row(i)[t] * d.row(j)[t];
            all.emplace_back(d.id(j), static_cast<double>(s));
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            return std::tie(b.second, a.first) < std::tie(a.second, b.first);
        });
        all.resize(std::min(k, all.size()));
        out.push_back(all);
    }
    return out;
}

}  // namespace

TEST(EmbeddingStore, EmptyMatrixIsSixteenBytes) {
    auto dir = scratch_dir("emb_empty");
    EmbeddingMatrix m(4);
    save_matrix(m, dir / "e.emb");
    EXPECT_EQ(std::filesystem::file_size(dir / "e.emb"), 16u);
    EXPECT_EQ(std::filesystem::file_size(dir / "e.emb.ids.jsonl"), 0u);
    auto loaded = load_matrix(dir / "e.emb");
    EXPECT_EQ(loaded.count(), 0u);
    EXPECT_EQ(loaded.dim(), 4u);
}

TEST(EmbeddingStore, PayloadEncodingIsLittleEndianIeee) {
    auto dir = scratch_dir("emb_bytes");
    EmbeddingMatrix m(2, {"x"}, {1.0f, 0.0f});
    save_matrix(m, dir / "m.emb");
    auto bytes = read_file(dir / "m.emb");
    ASSERT_EQ(bytes.size(), 24u);
    EXPECT_EQ(bytes.substr(0, 4), "EMB1");
    const unsigned char expected_header[] = {2, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0};
    const unsigned char expected_payload[] = {0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x00};
    for (int i = 0; i < 12; ++i) EXPECT_EQ((unsigned char)bytes[4 + i], expected_header[i]);
    for (int i = 0; i < 8; ++i) EXPECT_EQ((unsigned char)bytes[16 + i], expected_payload[i]);
    EXPECT_EQ(read_file(dir / "m.emb.ids.jsonl"), "{\"row\":0,\"id\":\"x\"}\n");
}

TEST(EmbeddingStore, RoundTripIsBitwise) {
    auto dir = scratch_dir("emb_roundtrip");
    auto m = random_unit_matrix(37, 5, 11);
    save_matrix(m, dir / "m.emb");
    auto back = load_matrix(dir / "m.emb");
    EXPECT_EQ(back, m);
}

TEST(EmbeddingStore, LoadRejectsCorruptFiles) {
    auto dir = scratch_dir("emb_corrupt");
    auto m = random_unit_matrix(3, 4, 1);
    save_matrix(m, dir / "m.emb");
    auto bytes = read_file(dir / "m.emb");

    auto bad = bytes;
    bad[3] = '2';
    write_file_atomic(dir / "m.emb", bad);
    try {
        load_matrix(dir / "m.emb");
        FAIL() << "expected format error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }

    write_file_atomic(dir / "m.emb", bytes.substr(0, bytes.size() - 4));
    try {
        load_matrix(dir / "m.emb");
        FAIL() << "expected format error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("payload length"), std::string::npos);
    }

    write_file_atomic(dir / "m.emb", bytes);
    write_file_atomic(dir / "m.emb.ids.jsonl",
                      "{\"row\":0,\"id\":\"a\"}\n{\"row\":1,\"id\":\"b\"}\n{\"row\":2,\"id\":\"a\"}\n");
    try {
        load_matrix(dir / "m.emb");
        FAIL() << "expected format error";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    }
}

TEST(EmbeddingStore, MissingFileIsStorageError) {
    EXPECT_THROW(load_matrix("/nonexistent/qadapt/x.emb"), StorageError);
}

TEST(EmbeddingStore, NormalizeRejectsZeroRows) {
    EmbeddingMatrix m(3, {"a", "b"}, {1, 2, 2, 0, 0, 0});
    EXPECT_THROW(m.normalize(), ContractError);
    EmbeddingMatrix ok(3, {"a"}, {1, 2, 2});
    ok.normalize();
    EXPECT_NEAR(dot(ok.row(0), ok.row(0)), 1.0, 1e-5);
}

TEST(EmbeddingStore, DuplicateIdsRejected) {
    EXPECT_THROW(EmbeddingMatrix(1, {"a", "a"}, {1, 1}), ContractError);
}

TEST(TopK, SelfSimilarityAtRankOne) {
    auto docs = random_unit_matrix(20, 6, 3);
    auto q = docs.select({"d7"});
    auto hits = top_k(q, docs, 1);
    ASSERT_EQ(hits[0].size(), 1u);
    EXPECT_EQ(hits[0][0].id, "d7");
    EXPECT_EQ(hits[0][0].rank, 1u);
    EXPECT_NEAR(hits[0][0].score, 1.0, 1e-5);
}

TEST(TopK, TiesBrokenByAscendingId) {
    EmbeddingMatrix docs(2, {"zeta", "alpha", "mid"}, {1, 0, 1, 0, 0, 1});
    EmbeddingMatrix q(2, {"q"}, {1, 0});
    auto hits = top_k(q, docs, 3);
    EXPECT_EQ(hits[0][0].id, "alpha");
    EXPECT_EQ(hits[0][1].id, "zeta");
    EXPECT_EQ(hits[0][2].id, "mid");
}

TEST(TopK, MatchesBruteForceOracle) {
    auto docs = random_unit_matrix(50, 8, 101);
    auto queries = random_unit_matrix(5, 8, 202, "q");
    auto got = top_k(queries, docs, 10);
    auto want = reference_top_k(queries, docs, 10);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
        ASSERT_EQ(got[i].size(), 10u);
        for (std::size_t r = 0; r < 10; ++r) {
            EXPECT_EQ(got[i][r].id, want[i][r].first);
            EXPECT_EQ(got[i][r].rank, r + 1);
            EXPECT_NEAR(got[i][r].score, want[i][r].second, 1e-6);
        }
    }
}

TEST(TopK, DimMismatchIsContractError) {
    auto docs = random_unit_matrix(4, 3, 1);
    auto q = random_unit_matrix(1, 4, 1);
    EXPECT_THROW(top_k(q, docs, 1), ContractError);
    EXPECT_THROW(top_k(docs, docs, 0), ContractError);
}

TEST(TopK, PropertiesOverRandomInstances) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto docs = random_unit_matrix(40, 4, seed);
        auto queries = random_unit_matrix(6, 4, seed + 1000, "q");
        auto small = top_k(queries, docs, 5);
        auto large = top_k(queries, docs, 15);
        auto threaded = top_k(queries, docs, 15, 3);
        EXPECT_EQ(large, threaded);
        for (std::size_t q = 0; q < queries.count(); ++q) {
            for (std::size_t r = 0; r < small[q].size(); ++r) EXPECT_EQ(small[q][r], large[q][r]);
            for (std::size_t r = 0; r < large[q].size(); ++r) {
                EXPECT_EQ(large[q][r].rank, r + 1);
                EXPECT_LE(large[q][r].score, 1.0f + 1e-5f);
                EXPECT_GE(large[q][r].score, -1.0f - 1e-5f);
                if (r > 0) EXPECT_LE(large[q][r].score, large[q][r - 1].score);
            }
        }
    }
}

TEST(MatrixWriter, StreamsEquivalentFile) {
    auto dir = scratch_dir("emb_writer");
    auto m = random_unit_matrix(9, 3, 5);
    {
        MatrixWriter w(dir / "s.emb", 3);
        for (std::size_t r = 0; r < m.count(); ++r) w.append(m.id(r), m.row(r));
        w.finish();
    }
    save_matrix(m, dir / "b.emb");
    EXPECT_EQ(read_file(dir / "s.emb"), read_file(dir / "b.emb"));
    EXPECT_EQ(read_file(dir / "s.emb.ids.jsonl"), read_file(dir / "b.emb.ids.jsonl"));
}
