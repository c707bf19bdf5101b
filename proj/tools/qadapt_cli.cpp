#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "qadapt/adapter_heads.hpp"
#include "qadapt/corpus_chunker.hpp"
#include "qadapt/embed_client.hpp"
#include "qadapt/embedding_store.hpp"
#include "qadapt/errors.hpp"
#include "qadapt/evaluator.hpp"
#include "qadapt/judge_filter.hpp"
#include "qadapt/lexical_bm25.hpp"
#include "qadapt/pool_builder.hpp"
#include "qadapt/query_cleaner.hpp"
#include "qadapt/relevance.hpp"
#include "qadapt/text_io.hpp"
#include "qadapt/trainer.hpp"

namespace fs = std::filesystem;
using namespace qadapt;

namespace {

// Artifact layout under --out. Every stage reads and writes only here.
struct Layout {
    fs::path root;

    fs::path lock() const { return root / ".qadapt.lock"; }
    fs::path chunks() const { return root / "chunks.jsonl"; }
    fs::path queries() const { return root / "queries.clean.jsonl"; }
    fs::path clean_report() const { return root / "clean_report.tsv"; }
    fs::path embedders() const { return root / "embedders.json"; }
    fs::path cache() const { return root / "cache"; }
    fs::path embedding_dir(const std::string& name) const { return root / "embeddings" / name; }
    fs::path chunk_embeddings(const std::string& name) const { return embedding_dir(name) / "chunks.emb"; }
    fs::path query_embeddings(const std::string& name) const { return embedding_dir(name) / "queries.emb"; }
    fs::path bm25() const { return root / "bm25" / "index.json"; }
    fs::path runs() const { return root / "runs"; }
    fs::path pool() const { return root / "pool.jsonl"; }
    fs::path verdicts() const { return root / "judge" / "verdicts.jsonl"; }
    fs::path review() const { return root / "judge" / "review.jsonl"; }
    fs::path validation() const { return root / "judge" / "validation.jsonl"; }
    fs::path qrels() const { return root / "qrels.trec"; }
    fs::path analysis() const { return root / "analysis"; }
    fs::path adapt_dir(const std::string& name) const { return root / "adapt" / name; }
    fs::path negatives(const std::string& name) const { return adapt_dir(name) / "negatives.jsonl"; }
    fs::path head_dir(const std::string& name, const std::string& kind) const { return adapt_dir(name) / kind; }
    fs::path eval_dir(const std::string& name) const { return root / "eval" / name; }
    fs::path report_tsv() const { return root / "report.tsv"; }
    fs::path report_md() const { return root / "report.md"; }
};

class MissingInput : public Error {
public:
    MissingInput(const fs::path& path, const std::string& producer)
        : Error("missing-input", path.string() + " not found (run `" + producer + "` first)") {}
};

void require(const fs::path& path, const std::string& producer) {
    if (!fs::exists(path)) throw MissingInput(path, producer);
}

void require_file(const fs::path& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw Error("missing-input", what + " " + path.string() + " not found");
}

// One process per output directory. A lock left by a dead process is
// taken over.
class OutputLock {
public:
    explicit OutputLock(const fs::path& path) : path_(path) {
        fs::create_directories(path.parent_path());
        for (int attempt = 0; attempt < 2; ++attempt) {
            const int fd = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
            if (fd >= 0) {
                const std::string pid = std::to_string(::getpid()) + "\n";
                [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
                ::close(fd);
                held_ = true;
                return;
            }
            if (errno != EEXIST) throw StorageError(path.string(), "cannot create lock file");
            long owner = 0;
            std::ifstream(path) >> owner;
            if (owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM)) {
                throw Error("locked", "output directory is in use by process " + std::to_string(owner) +
                                          " (" + path.string() + ")");
            }
            fs::remove(path);
        }
        throw Error("locked", "could not acquire " + path.string());
    }
    ~OutputLock() {
        if (held_) {
            std::error_code ec;
            fs::remove(path_, ec);
        }
    }

private:
    fs::path path_;
    bool held_ = false;
};

void check_name(const std::string& name) {
    const bool ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    }) && name != "." && name != ".." && name != "bm25";
    if (!ok) throw ContractError("embedder name '" + name + "' must use only letters, digits, '.', '-', '_' and not be 'bm25'");
}

std::vector<EmbedderSpec> embedder_specs(const Layout& out) {
    require(out.embedders(), "embed");
    auto specs = load_embedder_specs(out.embedders());
    for (const auto& s : specs) check_name(s.name);
    return specs;
}

EmbedderSpec pick_embedder(const Layout& out, const std::string& wanted) {
    const auto specs = embedder_specs(out);
    if (specs.empty()) throw ContractError("no embedders configured");
    if (wanted.empty()) return specs.front();
    for (const auto& s : specs) {
        if (s.name == wanted) return s;
    }
    throw ContractError("unknown embedder " + wanted);
}

std::shared_ptr<EmbeddingBackend> make_embed_backend(bool mock, std::uint64_t seed) {
    if (mock) return std::make_shared<MockEmbeddingBackend>(seed);
    return std::make_shared<HttpEmbeddingBackend>();
}

std::map<std::string, std::string> chunk_texts(const Layout& out) {
    require(out.chunks(), "chunk");
    std::map<std::string, std::string> texts;
    for (auto& c : read_chunks(out.chunks().string())) texts.emplace(c.id, std::move(c.text));
    return texts;
}

std::vector<QueryRecord> clean_queries(const Layout& out) {
    require(out.queries(), "clean-queries");
    return read_queries(out.queries().string());
}

std::vector<RunRanking> load_runs(const Layout& out) {
    require(out.runs(), "retrieve");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(out.runs())) {
        if (entry.path().extension() == ".trec") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MissingInput(out.runs() / "*.trec", "retrieve");
    std::vector<RunRanking> runs;
    for (const auto& f : files) runs.push_back(read_trec_run(f));
    return runs;
}

// Queries of one split that have at least one judged-relevant chunk.
std::vector<std::string> labeled_ids(const std::vector<QueryRecord>& queries, Split split,
                                     const RelevanceLabels& qrels) {
    std::vector<std::string> ids;
    for (const auto& q : queries) {
        auto it = qrels.find(q.id);
        if (q.split == split && it != qrels.end() && !it->second.empty()) ids.push_back(q.id);
    }
    return ids;
}

std::vector<std::string> split_ids(const std::vector<QueryRecord>& queries, Split split) {
    std::vector<std::string> ids;
    for (const auto& q : queries) {
        if (q.split == split) ids.push_back(q.id);
    }
    return ids;
}

std::string short_hash(const std::string& bytes) { return sha256_hex(bytes).substr(0, 16); }

struct Options {
    std::string out;
    std::uint64_t seed = 0;
    std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
};

// ---------------------------------------------------------------- stages

struct ChunkArgs {
    std::string corpus;
    std::size_t max_chars = 500;
    std::size_t overlap = 0;
};

void run_chunk(const Layout& out, const ChunkArgs& a) {
    require_file(a.corpus, "corpus");
    ChunkerOptions opts;
    opts.max_chars = a.max_chars;
    opts.overlap = a.overlap;
    std::ifstream in(a.corpus, std::ios::binary);
    std::ostringstream buf;
    const auto n = chunk_corpus(in, buf, opts, a.corpus);
    write_file_atomic(out.chunks(), buf.str());
    std::cout << "chunks\t" << n << "\t" << out.chunks().string() << "\n";
}

struct CleanArgs {
    std::string queries;
    double lower_pct = 0.25;
    double upper_pct = 0.25;
    double language_threshold = 0.15;
    std::size_t clusters = 0;
    std::string embedders;
    std::string embedder;
    bool mock = false;
    double test_fraction = 0.2;
};

void run_clean(const Layout& out, const Options& g, const CleanArgs& a) {
    require_file(a.queries, "queries");
    std::vector<QueryRecord> raw;
    std::set<std::string> ids;
    for_each_jsonl(fs::path(a.queries), [&](const Json& obj, std::size_t line) {
        auto id = json_string(obj, "id", a.queries, line);
        if (!ids.insert(id).second) throw FormatError(a.queries + ":" + std::to_string(line) + ": duplicate id " + id);
        raw.push_back(make_query(std::move(id), json_string(obj, "text", a.queries, line)));
    });

    std::vector<StageCount> stages;
    auto stage = [&](const std::string& name, std::size_t in, std::size_t kept) { stages.push_back({name, in, kept}); };

    auto q = length_filter(raw, a.lower_pct, a.upper_pct);
    stage("length", raw.size(), q.size());
    const std::size_t before_lang = q.size();
    auto lang = language_filter(q, stopword_detector(a.language_threshold));
    q = std::move(lang.kept);
    stage("language", before_lang, q.size());
    for (const auto& id : lang.flagged) std::cerr << "warning: language detector failed on " << id << "; kept\n";
    const std::size_t before_dedup = q.size();
    q = dedup(q);
    stage("dedup", before_dedup, q.size());
    if (a.clusters > 0 && a.clusters < q.size()) {
        if (a.embedders.empty()) throw ContractError("--clusters needs --embedders to embed queries");
        const auto specs = load_embedder_specs(a.embedders);
        EmbedderSpec spec = specs.front();
        if (!a.embedder.empty()) {
            auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& s) { return s.name == a.embedder; });
            if (it == specs.end()) throw ContractError("unknown embedder " + a.embedder);
            spec = *it;
        }
        EmbedClientOptions eo;
        eo.cache_dir = out.cache();
        EmbedClient client(spec, make_embed_backend(a.mock, g.seed), eo);
        std::vector<std::string> qids, texts;
        for (const auto& r : q) {
            qids.push_back(r.id);
            texts.push_back(r.text);
        }
        const auto embs = client.embed_records(qids, texts, TextRole::query);
        const std::size_t before = q.size();
        q = diversity_select(q, embs, a.clusters, g.seed);
        stage("diversity", before, q.size());
    }
    q = assign_splits(std::move(q), a.test_fraction, g.seed);
    write_queries(q, out.queries().string());
    const auto report = stage_report_tsv(stages);
    write_file_atomic(out.clean_report(), report);
    std::cout << report;
}

struct EmbedArgs {
    std::string embedders;
    std::vector<std::string> only;
    bool mock = false;
    std::string cache;
    std::size_t max_in_flight = 4;
};

void run_embed(const Layout& out, const Options& g, const EmbedArgs& a) {
    require_file(a.embedders, "embedder config");
    require(out.chunks(), "chunk");
    const auto queries = clean_queries(out);
    auto specs = load_embedder_specs(a.embedders);
    for (const auto& s : specs) check_name(s.name);
    // Later stages read the embedder list from the output directory.
    write_file_atomic(out.embedders(), read_file(a.embedders));

    EmbedClientOptions eo;
    eo.cache_dir = a.cache.empty() ? out.cache() : fs::path(a.cache);
    eo.max_in_flight = a.max_in_flight;
    std::vector<std::string> qids, qtexts;
    for (const auto& q : queries) {
        qids.push_back(q.id);
        qtexts.push_back(q.text);
    }
    for (const auto& spec : specs) {
        if (!a.only.empty() && std::find(a.only.begin(), a.only.end(), spec.name) == a.only.end()) continue;
        EmbedClient client(spec, make_embed_backend(a.mock, g.seed), eo);
        const auto rows = client.embed_corpus(out.chunks(), out.chunk_embeddings(spec.name));
        save_matrix(client.embed_records(qids, qtexts, TextRole::query), out.query_embeddings(spec.name));
        const auto st = client.stats();
        std::cout << spec.name << "\tchunks " << rows << "\tqueries " << qids.size() << "\tcache hits "
                  << st.cache_hits << "\tfetched " << st.fetched << "\trequests " << st.requests << "\n";
    }
}

struct Bm25Args {
    double k1 = 1.2;
    double b = 0.75;
};

void run_bm25(const Layout& out, const Bm25Args& a) {
    require(out.chunks(), "chunk");
    const auto index = build_index(read_chunks(out.chunks().string()), a.k1, a.b);
    save_index(index, out.bm25());
    std::cout << "bm25\tdocs " << index.n_docs() << "\tterms " << index.postings.size() << "\n";
}

struct RetrieveArgs {
    std::size_t depth = 420;
};

void run_retrieve(const Layout& out, const Options& g, const RetrieveArgs& a) {
    const auto queries = clean_queries(out);
    std::vector<std::string> qids;
    for (const auto& q : queries) qids.push_back(q.id);
    bool any = false;
    if (fs::exists(out.embedders())) {
        for (const auto& spec : embedder_specs(out)) {
            if (!fs::exists(out.chunk_embeddings(spec.name))) continue;
            require(out.query_embeddings(spec.name), "embed");
            const auto docs = load_matrix(out.chunk_embeddings(spec.name));
            const auto qembs = load_matrix(out.query_embeddings(spec.name)).select(qids);
            const auto run = make_run(spec.name, qids, top_k(qembs, docs, a.depth, g.threads));
            write_trec_run(run, out.runs() / (spec.name + ".trec"));
            std::cout << "run\t" << spec.name << "\n";
            any = true;
        }
    }
    if (fs::exists(out.bm25())) {
        const auto index = load_index(out.bm25());
        std::vector<HitList> hits;
        for (const auto& q : queries) hits.push_back(bm25_search(index, q.text, a.depth));
        write_trec_run(make_run("bm25", qids, hits), out.runs() / "bm25.trec");
        std::cout << "run\tbm25\n";
        any = true;
    }
    if (!any) throw Error("missing-input", "no retrievers available (run `embed` and/or `bm25-index` first)");
}

struct PoolArgs {
    std::size_t depth = 60;
};

void run_pool(const Layout& out, const PoolArgs& a) {
    const auto runs = load_runs(out);
    const auto pool = build_pool(runs, a.depth);
    write_pool(pool, out.pool());
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [q, chunks] : pool.queries) {
        lo = std::min(lo, chunks.size());
        hi = std::max(hi, chunks.size());
    }
    if (pool.queries.empty()) lo = 0;
    std::cout << "pool\tretrievers " << runs.size() << "\tqueries " << pool.queries.size() << "\tpairs "
              << pool.pair_count() << "\tmin " << lo << "\tmax " << hi << "\n";
}

struct JudgeArgs {
    std::string judge;
    bool mock = false;
    std::size_t concurrency = 4;
    double validation_fraction = 0.1;
};

void run_judge(const Layout& out, const Options& g, const JudgeArgs& a) {
    require(out.pool(), "pool");
    const auto pool = read_pool(out.pool());
    std::map<std::string, std::string> qtexts;
    for (const auto& q : clean_queries(out)) qtexts.emplace(q.id, q.text);
    const auto ctexts = chunk_texts(out);

    ChatSpec spec;
    std::unique_ptr<ChatBackend> backend;
    if (a.mock) {
        spec.name = "mock";
        backend = std::make_unique<MockChatBackend>();
    } else {
        if (a.judge.empty()) throw ContractError("judge needs --judge <spec.json> or --mock");
        require_file(a.judge, "judge config");
        spec = load_chat_spec(a.judge);
        backend = std::make_unique<HttpChatBackend>();
    }
    JudgeOptions opts;
    opts.concurrency = a.concurrency;
    opts.verdict_log = out.verdicts();
    const auto result = judge_pool(pool, qtexts, ctexts, *backend, spec, opts);
    write_trec_qrels(result.qrels, out.qrels());
    write_review_file(result.verdicts, out.review());
    std::size_t undecided = 0;
    for (const auto& v : result.verdicts) undecided += v.status == VerdictStatus::undecided;
    if (!result.qrels.empty()) {
        write_validation_sheet(result.qrels, sample_for_validation(result.qrels, a.validation_fraction, g.seed),
                               qtexts, ctexts, out.validation());
    } else {
        write_file_atomic(out.validation(), "");
    }
    std::cout << "judge\tpairs " << result.verdicts.size() << "\treused " << result.reused << "\trelevant "
              << count_pairs(result.qrels) << "\tundecided " << undecided << "\n";
    if (undecided > 0) std::cerr << "warning: " << undecided << " undecided pairs listed in " << out.review().string() << "\n";
}

struct AnalyzeArgs {
    std::size_t depth = 420;
};

void run_analyze(const Layout& out, const AnalyzeArgs& a) {
    require(out.qrels(), "judge");
    const auto qrels = read_trec_qrels(out.qrels());
    const auto runs = load_runs(out);
    std::map<std::string, double> individual;
    for (const auto& r : runs) individual[r.retriever] = individual_recall(r, qrels, a.depth);
    const std::string depth = std::to_string(a.depth);
    const auto ind = recall_table_tsv("retriever", "recall@" + depth, individual);
    write_file_atomic(out.analysis() / "individual.tsv", ind);
    std::cout << ind;
    if (runs.size() >= 2) {
        auto loo = leave_one_out(runs, qrels, a.depth);
        loo["(none)"] = pool_recall(build_pool(runs, a.depth), qrels);
        const auto tsv = recall_table_tsv("left_out", "pool_recall@" + depth, loo);
        write_file_atomic(out.analysis() / "leave_one_out.tsv", tsv);
        std::cout << "\n" << tsv;
    }
}

struct MineArgs {
    std::string embedder;
    std::size_t negatives = 16;
};

void run_mine(const Layout& out, const MineArgs& a) {
    require(out.qrels(), "judge");
    const auto spec = pick_embedder(out, a.embedder);
    require(out.chunk_embeddings(spec.name), "embed");
    const auto qrels = read_trec_qrels(out.qrels());
    const auto ids = labeled_ids(clean_queries(out), Split::train, qrels);
    if (ids.empty()) throw ContractError("no training query has a relevant chunk");
    const auto docs = load_matrix(out.chunk_embeddings(spec.name));
    const auto queries = load_matrix(out.query_embeddings(spec.name)).select(ids);
    const auto pool = mine_negatives(nullptr, queries, docs, qrels, a.negatives);
    save_negatives(pool, out.negatives(spec.name));
    std::cout << "mine\t" << spec.name << "\tqueries " << pool.size() << "\tper query " << a.negatives << "\n";
}

struct TrainArgs {
    std::string embedder;
    std::string head = "linear";
    std::string config;
    std::vector<std::string> settings;
    bool resume = false;
};

void run_train(const Layout& out, const Options& g, bool seed_given, const TrainArgs& a) {
    require(out.qrels(), "judge");
    const auto spec = pick_embedder(out, a.embedder);
    require(out.negatives(spec.name), "mine");
    require(out.chunk_embeddings(spec.name), "embed");

    TrainConfig config;
    if (!a.config.empty()) {
        require_file(a.config, "train config");
        config = parse_train_config(read_file(a.config));
    }
    for (const auto& s : a.settings) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw FormatError("--set expects key=value, got " + s);
        apply_train_setting(config, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (seed_given) config.seed = g.seed;
    config.validate();

    const auto qrels_all = read_trec_qrels(out.qrels());
    const auto ids = labeled_ids(clean_queries(out), Split::train, qrels_all);
    if (ids.empty()) throw ContractError("no training query has a relevant chunk");
    RelevanceLabels qrels;
    for (const auto& id : ids) qrels[id] = qrels_all.at(id);
    const auto docs = load_matrix(out.chunk_embeddings(spec.name));
    const auto queries = load_matrix(out.query_embeddings(spec.name)).select(ids);
    const auto negatives = load_negatives(out.negatives(spec.name));

    const fs::path dir = out.head_dir(spec.name, a.head);
    const fs::path checkpoints = dir / "checkpoints";
    TrainState state;
    bool resumed = false;
    if (a.resume && fs::exists(checkpoints)) {
        fs::path latest;
        std::size_t best = 0;
        for (const auto& e : fs::directory_iterator(checkpoints)) {
            const auto name = e.path().filename().string();
            if (name.rfind("step-", 0) != 0) continue;
            const auto step = std::stoull(name.substr(5));
            if (latest.empty() || step > best) {
                best = step;
                latest = e.path();
            }
        }
        if (!latest.empty()) {
            state = load_checkpoint(latest);
            resumed = true;
            std::cout << "resume\t" << latest.string() << "\n";
        }
    }
    if (!resumed) {
        fs::remove_all(checkpoints);
        state = init_train_state(config, make_identity_head(a.head, docs.dim()));
    }

    TrainHooks hooks;
    hooks.checkpoint_dir = checkpoints;
    hooks.initial_negatives = &negatives;
    hooks.on_refresh = [&](std::size_t step, const AdapterHead&, const NegativePool&) {
        std::cout << "refresh\tstep " << step << "\n";
    };
    state = train(config, std::move(state), {&queries, &docs, &qrels}, hooks);

    save_head(state.head, dir / "head.bin");
    write_file_atomic(dir / "history.tsv", history_tsv(state.history));
    write_file_atomic(dir / "train_config.txt", format_train_config(config));
    std::cout << history_tsv(state.history);
}

struct EvalArgs {
    std::string embedder;
    std::vector<std::string> heads = {"linear"};
    std::vector<std::size_t> k_list = {10};
};

void run_eval(const Layout& out, const EvalArgs& a) {
    require(out.qrels(), "judge");
    const auto spec = pick_embedder(out, a.embedder);
    require(out.chunk_embeddings(spec.name), "embed");
    const auto qrels = read_trec_qrels(out.qrels());
    const auto ids = split_ids(clean_queries(out), Split::test);
    if (ids.empty()) throw ContractError("no test queries; rerun clean-queries with --test-fraction > 0");
    const auto docs = load_matrix(out.chunk_embeddings(spec.name));
    const auto queries = load_matrix(out.query_embeddings(spec.name)).select(ids);
    const std::string store_id = spec.name + ":" + short_hash(read_file(out.chunk_embeddings(spec.name)));

    auto emit = [&](const std::string& variant, const AdapterHead* head, const std::string& head_id) {
        auto report = evaluate(head, queries, docs, qrels, a.k_list);
        report.head_id = head_id;
        report.store_id = store_id;
        save_report(report, out.eval_dir(spec.name) / (variant + ".json"));
        write_file_atomic(out.eval_dir(spec.name) / (variant + ".tsv"), report_tsv(report));
        std::cout << variant;
        for (const auto& m : report.metrics) std::cout << "\t" << m << " " << report.means.at(m);
        std::cout << "\tqueries " << report.evaluated() << "\tskipped " << report.skipped.size() << "\n";
    };
    emit("base", nullptr, "none");
    for (const auto& kind : a.heads) {
        const auto path = out.head_dir(spec.name, kind) / "head.bin";
        require(path, "train --head " + kind);
        const auto head = load_head(path);
        emit("adapted-" + kind, &head, kind + ":" + short_hash(read_file(path)));
    }
}

struct ReportArgs {
    std::string embedder;
};

void run_report(const Layout& out, const ReportArgs& a) {
    const fs::path eval_root = out.root / "eval";
    require(eval_root, "eval");
    std::vector<std::pair<std::string, EvalReport>> reports;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(eval_root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    const bool prefix = a.embedder.empty() && dirs.size() > 1;
    for (const auto& d : dirs) {
        const auto name = d.filename().string();
        if (!a.embedder.empty() && name != a.embedder) continue;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(d)) {
            if (e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::string variant = f.stem().string();
            variant = variant == "base" ? "Base" : "Adapted (" + variant.substr(variant.find('-') + 1) + ")";
            reports.emplace_back(prefix ? name + " " + variant : variant, load_report(f));
        }
    }
    if (reports.empty()) throw MissingInput(eval_root / "*/*.json", "eval");
    const auto table = compare_reports(reports);
    write_file_atomic(out.report_tsv(), table.tsv());
    write_file_atomic(out.report_md(), table.markdown());
    std::cout << table.markdown();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qadapt: retrieval benchmark construction and query-side adapter training"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();

    Options g;
    app.add_option("--out", g.out, "Output directory holding every stage's artifacts")->required();
    auto* seed_opt = app.add_option("--seed", g.seed, "Seed for every randomized step");
    app.add_option("--threads", g.threads, "Worker threads for exact search");

    ChunkArgs chunk;
    auto* c_chunk = app.add_subcommand("chunk", "Split corpus documents into chunks");
    c_chunk->add_option("--corpus", chunk.corpus, "Corpus JSONL with doc_id and text")->required();
    c_chunk->add_option("--max-chars", chunk.max_chars, "Maximum chunk length in characters");
    c_chunk->add_option("--overlap", chunk.overlap, "Characters carried over between chunks");

    CleanArgs clean;
    auto* c_clean = app.add_subcommand("clean-queries", "Filter raw queries and assign train/test splits");
    c_clean->add_option("--queries", clean.queries, "Raw query JSONL with id and text")->required();
    c_clean->add_option("--lower-pct", clean.lower_pct, "Drop word counts at or below this percentile");
    c_clean->add_option("--upper-pct", clean.upper_pct, "Drop word counts at or above 1 minus this percentile");
    c_clean->add_option("--language-threshold", clean.language_threshold, "Minimum English stopword ratio");
    c_clean->add_option("--clusters", clean.clusters, "k-means clusters for diversity selection (0 disables)");
    c_clean->add_option("--embedders", clean.embedders, "Embedder config used when --clusters > 0");
    c_clean->add_option("--embedder", clean.embedder, "Embedder name for clustering (default: first)");
    c_clean->add_flag("--mock", clean.mock, "Use the offline mock embedder for clustering");
    c_clean->add_option("--test-fraction", clean.test_fraction, "Fraction of kept queries assigned to test");

    EmbedArgs embed;
    auto* c_embed = app.add_subcommand("embed", "Embed chunks and cleaned queries with every configured embedder");
    c_embed->add_option("--embedders", embed.embedders, "Embedder config JSON")->required();
    c_embed->add_option("--only", embed.only, "Restrict to these embedder names");
    c_embed->add_flag("--mock", embed.mock, "Use the offline mock embedder instead of HTTP");
    c_embed->add_option("--cache", embed.cache, "Embedding cache directory (default: <out>/cache)");
    c_embed->add_option("--max-in-flight", embed.max_in_flight, "Concurrent embedding requests");

    Bm25Args bm25;
    auto* c_bm25 = app.add_subcommand("bm25-index", "Build the BM25 index over chunks");
    c_bm25->add_option("--k1", bm25.k1, "BM25 k1");
    c_bm25->add_option("--b", bm25.b, "BM25 b");

    RetrieveArgs retrieve;
    auto* c_retrieve = app.add_subcommand("retrieve", "Write one TREC run per retriever for all cleaned queries");
    c_retrieve->add_option("--depth", retrieve.depth, "Results kept per query");

    PoolArgs pool;
    auto* c_pool = app.add_subcommand("pool", "Union the runs into a candidate pool");
    c_pool->add_option("--depth", pool.depth, "Results taken from each run per query");

    JudgeArgs judge;
    auto* c_judge = app.add_subcommand("judge", "Filter the pool with an LLM judge and write qrels");
    c_judge->add_option("--judge", judge.judge, "Chat endpoint config JSON");
    c_judge->add_flag("--mock", judge.mock, "Use the offline token-containment judge");
    c_judge->add_option("--concurrency", judge.concurrency, "Concurrent judge calls");
    c_judge->add_option("--validation-fraction", judge.validation_fraction, "Share of queries exported for manual review");

    AnalyzeArgs analyze;
    auto* c_analyze = app.add_subcommand("analyze", "Per-retriever and leave-one-out recall tables");
    c_analyze->add_option("--depth", analyze.depth, "Candidates per query and retriever");

    MineArgs mine;
    auto* c_mine = app.add_subcommand("mine", "Mine hard negatives for training queries with base embeddings");
    c_mine->add_option("--embedder", mine.embedder, "Embedder name (default: first configured)");
    c_mine->add_option("--negatives", mine.negatives, "Hard negatives kept per query");

    TrainArgs trainer;
    auto* c_train = app.add_subcommand("train", "Train a query adapter head");
    c_train->add_option("--embedder", trainer.embedder, "Embedder name (default: first configured)");
    c_train->add_option("--head", trainer.head, "Head kind")->check(CLI::IsMember({"linear", "ffn"}));
    c_train->add_option("--config", trainer.config, "Train config file (key = value lines)");
    c_train->add_option("--set", trainer.settings, "Override one config key, e.g. --set lr=1e-4");
    c_train->add_flag("--resume", trainer.resume, "Continue from the latest checkpoint");
    c_train->footer("Config keys and defaults (override with --config or --set):\n" +
                    format_train_config(TrainConfig{}));

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate base and adapted retrieval on test queries");
    c_eval->add_option("--embedder", eval.embedder, "Embedder name (default: first configured)");
    c_eval->add_option("--head", eval.heads, "Trained head kinds to evaluate");
    c_eval->add_option("--k", eval.k_list, "Cutoffs for recall@k and ndcg@k");

    ReportArgs report;
    auto* c_report = app.add_subcommand("report", "Render the Base-vs-Adapted comparison table");
    c_report->add_option("--embedder", report.embedder, "Only this embedder's reports");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: usage: " << msg << "\n";
        return 1;
    }

    try {
        const Layout out{fs::path(g.out)};
        OutputLock lock(out.lock());
        if (c_chunk->parsed()) run_chunk(out, chunk);
        else if (c_clean->parsed()) run_clean(out, g, clean);
        else if (c_embed->parsed()) run_embed(out, g, embed);
        else if (c_bm25->parsed()) run_bm25(out, bm25);
        else if (c_retrieve->parsed()) run_retrieve(out, g, retrieve);
        else if (c_pool->parsed()) run_pool(out, pool);
        else if (c_judge->parsed()) run_judge(out, g, judge);
        else if (c_analyze->parsed()) run_analyze(out, analyze);
        else if (c_mine->parsed()) run_mine(out, mine);
        else if (c_train->parsed()) run_train(out, g, seed_opt->count() > 0, trainer);
        else if (c_eval->parsed()) run_eval(out, eval);
        else if (c_report->parsed()) run_report(out, report);
    } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: " << e.kind() << ": " << msg << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::cerr << "error: internal: " << msg << "\n";
        return 1;
    }
    return 0;
}
