#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "cli_runner.hpp"
#include "qadapt/query_cleaner.hpp"
#include "qadapt/relevance.hpp"
#include "test_util.hpp"

using qadapt::testing::CliResult;
using qadapt::testing::report_value;
using qadapt::testing::scratch_dir;
using qadapt::testing::slurp;

namespace {

const std::filesystem::path kToy = std::filesystem::path(QADAPT_FIXTURE_DIR) / "toy";

CliResult cli(const std::filesystem::path& out, std::vector<std::string> args) {
    args.insert(args.begin(), {"--out", out.string()});
    return qadapt::testing::run_cli(QADAPT_CLI_PATH, args, out.parent_path() / (out.filename().string() + ".io"));
}

bool single_error_line(const std::string& err) {
    return err.rfind("error: ", 0) == 0 && std::count(err.begin(), err.end(), '\n') == 1;
}

const std::vector<std::vector<std::string>> kPipeline = {
    {"chunk", "--corpus", (kToy / "corpus.jsonl").string()},
    {"clean-queries", "--queries", (kToy / "queries.jsonl").string()},
    {"embed", "--embedders", (kToy / "embedders.json").string(), "--mock"},
    {"bm25-index"},
    {"retrieve"},
    {"pool"},
    {"judge", "--mock"},
    {"analyze"},
    {"mine", "--embedder", "toy-rot"},
    {"train", "--embedder", "toy-rot", "--config", (kToy / "train.conf").string()},
    {"eval", "--embedder", "toy-rot"},
    {"report"},
};

void run_pipeline(const std::filesystem::path& out) {
    for (const auto& stage : kPipeline) {
        const auto r = cli(out, stage);
        ASSERT_EQ(r.exit_code, 0) << stage[0] << ": " << r.err;
    }
}

std::vector<std::filesystem::path> artifacts(const std::filesystem::path& root) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) files.push_back(std::filesystem::relative(e.path(), root));
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

TEST(Cli, EmptyCorpusGivesEmptyChunks) {
    const auto dir = scratch_dir("cli_empty");
    std::ofstream(dir / "empty.jsonl").close();
    const auto r = cli(dir / "out", {"chunk", "--corpus", (dir / "empty.jsonl").string()});
    EXPECT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(slurp(dir / "out" / "chunks.jsonl"), "");
    EXPECT_FALSE(std::filesystem::exists(dir / "out" / ".qadapt.lock"));
}

TEST(Cli, TrainWithoutQrelsNamesTheArtifact) {
    const auto dir = scratch_dir("cli_noqrels");
    const auto r = cli(dir / "out", {"train"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_TRUE(single_error_line(r.err)) << r.err;
    EXPECT_NE(r.err.find("qrels.trec"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("missing-input"), std::string::npos) << r.err;
}

TEST(Cli, ErrorsAreSingleMachineParseableLines) {
    const auto dir = scratch_dir("cli_errors");
    std::ofstream(dir / "bad.jsonl") << "{\"doc_id\": \"a\", \"text\": 3}\n";
    auto r = cli(dir / "out", {"chunk", "--corpus", (dir / "bad.jsonl").string()});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_TRUE(single_error_line(r.err)) << r.err;
    EXPECT_EQ(r.err.rfind("error: format: ", 0), 0u) << r.err;

    r = cli(dir / "out", {"frobnicate"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_TRUE(single_error_line(r.err)) << r.err;

    r = cli(dir / "out", {"judge"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.err.find("pool.jsonl"), std::string::npos) << r.err;

    r = cli(dir / "out", {"train", "--head", "mlp"});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_TRUE(single_error_line(r.err)) << r.err;
}

TEST(Cli, LiveLockRefusesStaleLockIsTakenOver) {
    const auto dir = scratch_dir("cli_lock");
    std::ofstream(dir / "empty.jsonl").close();
    std::filesystem::create_directories(dir / "out");
    std::ofstream(dir / "out" / ".qadapt.lock") << "1\n";  // init never goes away
    auto r = cli(dir / "out", {"chunk", "--corpus", (dir / "empty.jsonl").string()});
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_EQ(r.err.rfind("error: locked: ", 0), 0u) << r.err;
    std::ofstream(dir / "out" / ".qadapt.lock") << "2147483646\n";
    r = cli(dir / "out", {"chunk", "--corpus", (dir / "empty.jsonl").string()});
    EXPECT_EQ(r.exit_code, 0) << r.err;
}

TEST(Cli, HelpShowsDefaults) {
    const auto dir = scratch_dir("cli_help");
    auto r = cli(dir / "out", {"chunk", "--help"});
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.out.find("--max-chars UINT [500]"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("--overlap UINT [0]"), std::string::npos) << r.out;
    r = cli(dir / "out", {"pool", "--help"});
    EXPECT_NE(r.out.find("--depth UINT [60]"), std::string::npos) << r.out;
    r = cli(dir / "out", {"analyze", "--help"});
    EXPECT_NE(r.out.find("--depth UINT [420]"), std::string::npos) << r.out;
    r = cli(dir / "out", {"clean-queries", "--help"});
    EXPECT_NE(r.out.find("--lower-pct FLOAT [0.25]"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("--language-threshold FLOAT [0.15]"), std::string::npos) << r.out;
    r = cli(dir / "out", {"train", "--help"});
    for (const char* line : {"temperature = 0.1", "lr = 5e-06", "batch_size = 32", "negatives_mined = 16",
                             "negatives_sampled = 8", "refresh_interval = 200", "adamw.weight_decay = 0.01"}) {
        EXPECT_NE(r.out.find(line), std::string::npos) << line;
    }
}

TEST(Cli, ToyPipelineEndToEnd) {
    const auto dir = scratch_dir("cli_pipeline");
    run_pipeline(dir / "out");
    const auto report = slurp(dir / "out" / "report.md");
    const double base = report_value(report, "Base");
    const double adapted = report_value(report, "Adapted (linear)");
    EXPECT_GE(base, 0.0) << report;
    EXPECT_GE(adapted, base) << report;
    EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 4) << report;

    // Stage artifacts stay consistent with each other.
    const auto qrels = qadapt::read_trec_qrels(dir / "out" / "qrels.trec");
    const auto queries = qadapt::read_queries((dir / "out" / "queries.clean.jsonl").string());
    EXPECT_FALSE(qrels.empty());
    for (const auto& q : queries) EXPECT_NE(q.split, qadapt::Split::unassigned);
    EXPECT_EQ(slurp(dir / "out" / "judge" / "review.jsonl"), "");
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "adapt" / "toy-rot" / "linear" / "head.bin"));
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "analysis" / "leave_one_out.tsv"));
}

TEST(Cli, RerunsAreByteIdentical) {
    const auto dir = scratch_dir("cli_rerun");
    run_pipeline(dir / "a");
    run_pipeline(dir / "b");
    std::map<std::filesystem::path, std::string> first;
    for (const auto& f : artifacts(dir / "a")) first[f] = slurp(dir / "a" / f);
    run_pipeline(dir / "a");  // again, now with warm caches and verdict log
    ASSERT_EQ(artifacts(dir / "a"), artifacts(dir / "b"));
    for (const auto& f : artifacts(dir / "a")) {
        EXPECT_EQ(slurp(dir / "a" / f), first[f]) << f;
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
}
