#include "qadapt/trainer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "qadapt/errors.hpp"
#include "test_util.hpp"

using namespace qadapt;
using qadapt::testing::finite_difference;
using qadapt::testing::random_unit_matrix;
using qadapt::testing::relative_error;

namespace {

Vec unit_vec(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<double> g(0, 1);
    Vec v(d);
    double n = 0;
    for (auto& x : v) {
        x = g(rng);
        n += x * x;
    }
    for (auto& x : v) x /= std::sqrt(n);
    return v;
}

std::vector<std::span<const double>> spans(const std::vector<Vec>& vs) {
    return {vs.begin(), vs.end()};
}

// Queries are noisy copies of their (single) positive doc.
struct ToyTask {
    EmbeddingMatrix docs;
    EmbeddingMatrix queries;
    RelevanceLabels qrels;
};

ToyTask toy_task(std::size_t n_docs, std::size_t n_queries, std::size_t dim, std::uint64_t seed) {
    ToyTask t;
    t.docs = random_unit_matrix(n_docs, dim, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<float> noise(0.0f, 0.3f);
    std::vector<std::string> ids;
    std::vector<float> data;
    for (std::size_t q = 0; q < n_queries; ++q) {
        const std::size_t target = (q * 7) % n_docs;
        ids.push_back("q" + std::to_string(q));
        for (std::size_t j = 0; j < dim; ++j) data.push_back(t.docs.row(target)[j] + noise(rng));
        t.qrels[ids.back()][t.docs.id(target)] = 1;
    }
    t.queries = EmbeddingMatrix(dim, ids, data);
    t.queries.normalize();
    return t;
}

}  // namespace

TEST(InfoNce, UniformSimilaritiesGiveLogNine) {
    Vec q = {1, 0, 0, 0};
    Vec pos = {0, 1, 0, 0};
    std::vector<Vec> negs(8, Vec{0, 0, 1, 0});
    auto r = infonce_loss(q, pos, spans(negs), 0.1);
    EXPECT_NEAR(r.loss, std::log(9.0), 1e-9);
}

TEST(InfoNce, SaturatedCaseIsNearZero) {
    Vec q = {1, 0};
    Vec pos = {1, 0};
    std::vector<Vec> negs(8, Vec{-1, 0});
    auto r = infonce_loss(q, pos, spans(negs), 0.01);
    EXPECT_LT(r.loss, 1e-6);
    EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        Vec q = unit_vec(rng, 8), pos = unit_vec(rng, 8);
        std::vector<Vec> negs;
        for (int i = 0; i < 8; ++i) negs.push_back(unit_vec(rng, 8));
        auto analytic = infonce_loss(q, pos, spans(negs), 0.1).grad;
        auto numeric = finite_difference(q, [&]() { return infonce_loss(q, pos, spans(negs), 0.1).loss; });
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(InfoNce, RejectsBadArguments) {
    Vec q = {1, 0};
    std::vector<Vec> negs(1, Vec{0, 1});
    EXPECT_THROW(infonce_loss(q, q, spans(negs), 0.0), ContractError);
    EXPECT_THROW(infonce_loss(q, q, spans(negs), -1.0), ContractError);
    EXPECT_THROW(infonce_loss(q, q, {}, 0.1), ContractError);
}

TEST(Schedule, CosineAnchors) {
    EXPECT_EQ(lr_at(0, 1000, 5e-6), 5e-6);
    EXPECT_EQ(lr_at(1000, 1000, 5e-6), 0.0);
    EXPECT_EQ(lr_at(500, 1000, 5e-6), 2.5e-6);
    for (std::size_t s = 1; s <= 1000; ++s) EXPECT_LE(lr_at(s, 1000, 5e-6), lr_at(s - 1, 1000, 5e-6));
    EXPECT_THROW(lr_at(1001, 1000, 5e-6), ContractError);
}

TEST(TrainConfig, DefaultsAndParsing) {
    TrainConfig c;
    EXPECT_EQ(c.temperature, 0.1);
    EXPECT_EQ(c.lr, 5e-6);
    EXPECT_EQ(c.batch_size, 32u);
    EXPECT_EQ(c.negatives_mined, 16u);
    EXPECT_EQ(c.negatives_sampled, 8u);
    EXPECT_EQ(c.refresh_interval, 200u);
    EXPECT_EQ(c.adamw.weight_decay, 0.01);
    auto parsed = parse_train_config("# comment\nlr = 0.001\n total_steps=50 \nadamw.beta2 = 0.99\n");
    EXPECT_EQ(parsed.lr, 0.001);
    EXPECT_EQ(parsed.total_steps, 50u);
    EXPECT_EQ(parsed.adamw.beta2, 0.99);
    EXPECT_THROW(parse_train_config("bogus = 1\n"), FormatError);
    EXPECT_THROW(parse_train_config("lr = fast\n"), FormatError);
    EXPECT_EQ(parse_train_config(format_train_config(parsed)).lr, parsed.lr);
    TrainConfig bad;
    bad.negatives_sampled = 20;
    EXPECT_THROW(bad.validate(), ContractError);
}

TEST(MineNegatives, ForcedSetWhenPositivesFillCorpus) {
    auto docs = random_unit_matrix(40, 6, 3);
    auto queries = random_unit_matrix(1, 6, 4, "q");
    RelevanceLabels qrels;
    for (std::size_t i = 16; i < 40; ++i) qrels["q0"][docs.id(i)] = 1;
    auto pool = mine_negatives(nullptr, queries, docs, qrels, 16);
    auto got = pool.at("q0");
    std::sort(got.begin(), got.end());
    std::vector<std::string> want;
    for (std::size_t i = 0; i < 16; ++i) want.push_back(docs.id(i));
    std::sort(want.begin(), want.end());
    EXPECT_EQ(got, want);
    qrels["q0"][docs.id(0)] = 1;
    EXPECT_THROW(mine_negatives(nullptr, queries, docs, qrels, 16), ContractError);
}

TEST(MineNegatives, IdentityHeadEqualsBaseMining) {
    auto task = toy_task(100, 20, 8, 5);
    AdapterHead head = LinearHead::identity(8);
    EXPECT_EQ(mine_negatives(&head, task.queries, task.docs, task.qrels, 16),
              mine_negatives(nullptr, task.queries, task.docs, task.qrels, 16));
}

TEST(MineNegatives, MatchesExhaustiveOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto task = toy_task(20, 6, 5, seed);
        auto pool = mine_negatives(nullptr, task.queries, task.docs, task.qrels, 4);
        for (std::size_t q = 0; q < task.queries.count(); ++q) {
            const auto& qid = task.queries.id(q);
            std::vector<std::pair<double, std::string>> all;
            for (std::size_t d = 0; d < 20; ++d) {
                if (task.qrels[qid].count(task.docs.id(d))) continue;
                double s = 0;
                for (std::size_t j = 0; j < 5; ++j) s += (double)task.queries.row(q)[j] * task.docs.row(d)[j];
                all.emplace_back(-s, task.docs.id(d));
            }
            std::sort(all.begin(), all.end());
            std::vector<std::string> want;
            for (std::size_t i = 0; i < 4; ++i) want.push_back(all[i].second);
            EXPECT_EQ(pool.at(qid), want);
        }
    }
}

TEST(AdamW, ZeroGradientDecaysByExactFactor) {
    AdamWConfig cfg;
    cfg.weight_decay = 0.1;
    AdapterHead head = LinearHead::identity(3);
    AdamW opt(cfg, head);
    std::vector<Vec> zero = {Vec(9, 0.0), Vec(3, 0.0)};
    double expected = 1.0;
    for (int step = 0; step < 5; ++step) {
        const double lr = 0.01 * (step + 1);
        opt.step(head, zero, lr);
        expected = static_cast<float>(expected * (1.0 - lr * 0.1));
        EXPECT_EQ(std::get<LinearHead>(head).weight[0], static_cast<float>(expected));
        EXPECT_EQ(std::get<LinearHead>(head).weight[1], 0.0f);
    }
}

TEST(Train, ZeroLearningRateIsNoOp) {
    auto task = toy_task(80, 24, 8, 2);
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.total_steps = 30;
    cfg.batch_size = 4;
    cfg.refresh_interval = 10;
    auto initial = make_identity_head("linear", 8);
    auto state = train(cfg, init_train_state(cfg, initial), {&task.queries, &task.docs, &task.qrels});
    EXPECT_EQ(state.head, initial);
    ASSERT_GE(state.history.size(), 2u);
    for (const auto& h : state.history) EXPECT_EQ(h.train_ndcg10, state.history.front().train_ndcg10);
}

TEST(Train, SingleStepMatchesHandAdamW) {
    const std::size_t d = 4;
    auto docs = random_unit_matrix(6, d, 42);
    auto queries = random_unit_matrix(1, d, 43, "q");
    RelevanceLabels qrels = {{"q0", {{"d0", 1}}}};
    TrainConfig cfg;
    cfg.total_steps = 1;
    cfg.refresh_interval = 1;
    cfg.batch_size = 1;
    cfg.negatives_mined = 2;
    cfg.negatives_sampled = 2;
    cfg.lr = 1e-3;
    auto state = train(cfg, init_train_state(cfg, LinearHead::identity(d)), {&queries, &docs, &qrels});

    // Oracle: brute-force mining, closed-form InfoNCE gradient through the
    // normalization, first Adam step with bias correction.
    Vec x(queries.row(0).begin(), queries.row(0).end());
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 1; i < docs.count(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[j] * docs.row(i)[j];
        scored.emplace_back(-s, i);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::size_t> cands = {0, scored[0].second, scored[1].second};
    std::vector<double> logits;
    for (auto c : cands) {
        double s = 0;
        for (std::size_t j = 0; j < d; ++j) s += x[j] * docs.row(c)[j];
        logits.push_back(s / 0.1);
    }
    double z = 0;
    for (double l : logits) z += std::exp(l);
    Vec gu(d, 0.0);
    for (std::size_t c = 0; c < cands.size(); ++c) {
        for (std::size_t j = 0; j < d; ++j) gu[j] += std::exp(logits[c]) / z * docs.row(cands[c])[j];
    }
    for (std::size_t j = 0; j < d; ++j) gu[j] = (gu[j] - docs.row(0)[j]) / 0.1;
    double xg = 0;
    for (std::size_t j = 0; j < d; ++j) xg += x[j] * gu[j];
    Vec gy(d);
    for (std::size_t j = 0; j < d; ++j) gy[j] = gu[j] - x[j] * xg;

    auto adam = [&](double theta, double g) {
        return theta - 1e-3 * 0.01 * theta - 1e-3 * g / (std::abs(g) + 1e-8);
    };
    const auto& head = std::get<LinearHead>(state.head);
    for (std::size_t i = 0; i < d; ++i) {
        EXPECT_NEAR(head.bias[i], adam(0.0, gy[i]), 1e-7);
        for (std::size_t j = 0; j < d; ++j) {
            EXPECT_NEAR(head.weight[i * d + j], adam(i == j ? 1.0 : 0.0, gy[i] * x[j]), 1e-7);
        }
    }
}

TEST(Train, UniformSimilarityLossAtStepZero) {
    // Queries along e0, docs in the orthogonal complement: every score is 0.
    const std::size_t d = 6;
    std::vector<float> qdata, ddata;
    std::vector<std::string> qids, dids;
    std::mt19937_64 rng(1);
    std::normal_distribution<float> g(0, 1);
    for (int i = 0; i < 30; ++i) {
        dids.push_back("d" + std::to_string(i));
        ddata.push_back(0.0f);
        for (std::size_t j = 1; j < d; ++j) ddata.push_back(g(rng));
    }
    RelevanceLabels qrels;
    for (int i = 0; i < 5; ++i) {
        qids.push_back("q" + std::to_string(i));
        qdata.push_back(1.0f);
        for (std::size_t j = 1; j < d; ++j) qdata.push_back(0.0f);
        qrels[qids.back()]["d" + std::to_string(i)] = 1;
    }
    EmbeddingMatrix docs(d, dids, ddata), queries(d, qids, qdata);
    docs.normalize();
    TrainConfig cfg;
    cfg.total_steps = 1;
    cfg.batch_size = 5;
    auto state = train(cfg, init_train_state(cfg, LinearHead::identity(d)), {&queries, &docs, &qrels});
    EXPECT_NEAR(state.history.front().loss, std::log(9.0), 1e-6);
}

TEST(Train, RefreshCadenceAndPoolHygiene) {
    auto task = toy_task(150, 40, 8, 11);
    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.total_steps = 45;
    cfg.batch_size = 4;
    cfg.refresh_interval = 10;
    std::vector<std::size_t> seen;
    TrainHooks hooks;
    hooks.on_refresh = [&](std::size_t step, const AdapterHead&, const NegativePool& pool) {
        if (step == cfg.total_steps) return;
        seen.push_back(step);
        for (const auto& [qid, negs] : pool) {
            EXPECT_EQ(negs.size(), cfg.negatives_mined);
            for (const auto& n : negs) EXPECT_EQ(task.qrels[qid].count(n), 0u);
        }
    };
    auto state = train(cfg, init_train_state(cfg, LinearHead::identity(8)),
                       {&task.queries, &task.docs, &task.qrels}, hooks);
    std::vector<std::size_t> want = {0, 10, 20, 30, 40};
    EXPECT_EQ(seen, want);
    EXPECT_EQ(state.refresh_steps, want);
    EXPECT_EQ(state.history.size(), want.size() + 1);
    EXPECT_EQ(state.history.back().step, 45u);
}

TEST(Train, SameSeedSameTrajectory) {
    auto task = toy_task(120, 30, 8, 3);
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.total_steps = 40;
    cfg.batch_size = 6;
    cfg.refresh_interval = 10;
    cfg.seed = 99;
    for (const char* kind : {"linear", "ffn"}) {
        auto a = train(cfg, init_train_state(cfg, make_identity_head(kind, 8)), {&task.queries, &task.docs, &task.qrels});
        auto b = train(cfg, init_train_state(cfg, make_identity_head(kind, 8)), {&task.queries, &task.docs, &task.qrels});
        EXPECT_EQ(a.head, b.head);
        ASSERT_EQ(a.history.size(), b.history.size());
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            EXPECT_NEAR(a.history[i].loss, b.history[i].loss, 1e-6);
            EXPECT_NEAR(a.history[i].train_ndcg10, b.history[i].train_ndcg10, 1e-6);
        }
    }
}

TEST(Train, CheckpointResumeReproducesTrajectory) {
    auto dir = qadapt::testing::scratch_dir("train_ckpt");
    auto task = toy_task(120, 30, 8, 21);
    TrainConfig cfg;
    cfg.lr = 5e-3;
    cfg.total_steps = 40;
    cfg.batch_size = 5;
    cfg.refresh_interval = 15;
    cfg.checkpoint_every = 20;
    TrainData data{&task.queries, &task.docs, &task.qrels};
    TrainHooks hooks;
    hooks.checkpoint_dir = dir;
    auto full = train(cfg, init_train_state(cfg, make_identity_head("ffn", 8)), data, hooks);
    ASSERT_TRUE(std::filesystem::exists(dir / "step-20" / "state.json"));
    auto resumed = train(cfg, load_checkpoint(dir / "step-20"), data);
    EXPECT_EQ(resumed.step, full.step);
    auto a = head_parameters(full.head), b = head_parameters(resumed.head);
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a[t].size(); ++i) EXPECT_NEAR(a[t][i], b[t][i], 1e-6);
    }
    ASSERT_EQ(full.history.size(), resumed.history.size());
    for (std::size_t i = 0; i < full.history.size(); ++i) {
        EXPECT_NEAR(full.history[i].loss, resumed.history[i].loss, 1e-6);
    }
    EXPECT_EQ(load_checkpoint(dir / "final").head, full.head);
}

TEST(Train, ImprovesRecallOnNoisyCopies) {
    auto task = toy_task(300, 120, 16, 8);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.total_steps = 150;
    cfg.batch_size = 16;
    cfg.refresh_interval = 50;
    auto state = train(cfg, init_train_state(cfg, make_identity_head("linear", 16)),
                       {&task.queries, &task.docs, &task.qrels});
    EXPECT_GE(state.history.back().train_ndcg10, state.history.front().train_ndcg10);
}

TEST(Train, ContractAndNumericErrors) {
    auto task = toy_task(60, 10, 4, 1);
    TrainConfig cfg;
    cfg.total_steps = 2;
    cfg.batch_size = 2;
    auto qrels = task.qrels;
    qrels.erase("q3");
    EXPECT_THROW(train(cfg, init_train_state(cfg, LinearHead::identity(4)), {&task.queries, &task.docs, &qrels}),
                 ContractError);
    auto broken = LinearHead::identity(4);
    broken.weight.assign(16, std::nanf(""));
    try {
        train(cfg, init_train_state(cfg, broken), {&task.queries, &task.docs, &task.qrels});
        FAIL() << "expected numeric error";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
    }
}

TEST(Negatives, FileRoundTrip) {
    auto dir = qadapt::testing::scratch_dir("neg_io");
    NegativePool pool = {{"q1", {"a", "b"}}, {"q2", {"c"}}};
    save_negatives(pool, dir / "n.jsonl");
    EXPECT_EQ(load_negatives(dir / "n.jsonl"), pool);
}
