#include "qadapt/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "qadapt/errors.hpp"
#include "qadapt/evaluator.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

void TrainConfig::validate() const {
    if (!(temperature > 0.0)) throw ContractError("temperature must be > 0");
    if (lr < 0.0) throw ContractError("lr must be >= 0");
    if (total_steps == 0) throw ContractError("total_steps must be >= 1");
    if (batch_size == 0) throw ContractError("batch_size must be >= 1");
    if (negatives_sampled == 0) throw ContractError("negatives_sampled must be >= 1");
    if (negatives_sampled > negatives_mined) {
        throw ContractError("negatives_sampled must not exceed negatives_mined");
    }
    if (refresh_interval == 0) throw ContractError("refresh_interval must be >= 1");
    if (adamw.beta1 < 0.0 || adamw.beta1 >= 1.0 || adamw.beta2 < 0.0 || adamw.beta2 >= 1.0) {
        throw ContractError("AdamW betas must lie in [0, 1)");
    }
}

void apply_train_setting(TrainConfig& c, const std::string& key, const std::string& value) {
    auto as_double = [&]() {
        try {
            std::size_t used = 0;
            double v = std::stod(value, &used);
            if (used != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw FormatError("train config: " + key + " expects a number, got \"" + value + "\"");
        }
    };
    auto as_size = [&]() {
        try {
            std::size_t used = 0;
            auto v = std::stoull(value, &used);
            if (used != value.size() || value.front() == '-') throw std::invalid_argument(value);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw FormatError("train config: " + key + " expects a non-negative integer, got \"" +
                              value + "\"");
        }
    };
    if (key == "temperature") c.temperature = as_double();
    else if (key == "lr") c.lr = as_double();
    else if (key == "total_steps") c.total_steps = as_size();
    else if (key == "batch_size") c.batch_size = as_size();
    else if (key == "negatives_mined") c.negatives_mined = as_size();
    else if (key == "negatives_sampled") c.negatives_sampled = as_size();
    else if (key == "refresh_interval") c.refresh_interval = as_size();
    else if (key == "seed") c.seed = as_size();
    else if (key == "adamw.beta1") c.adamw.beta1 = as_double();
    else if (key == "adamw.beta2") c.adamw.beta2 = as_double();
    else if (key == "adamw.eps") c.adamw.eps = as_double();
    else if (key == "adamw.weight_decay") c.adamw.weight_decay = as_double();
    else if (key == "checkpoint_every") c.checkpoint_every = as_size();
    else throw FormatError("train config: unknown key \"" + key + "\"");
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto body = trim(line);
        if (body.empty()) continue;
        auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw FormatError("train config line " + std::to_string(line_no) + ": expected key = value");
        }
        apply_train_setting(base, trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
    return base;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

std::string format_train_config(const TrainConfig& c) {
    std::ostringstream out;
    out << "temperature = " << shortest(c.temperature) << "\n"
        << "lr = " << shortest(c.lr) << "\n"
        << "total_steps = " << c.total_steps << "\n"
        << "batch_size = " << c.batch_size << "\n"
        << "negatives_mined = " << c.negatives_mined << "\n"
        << "negatives_sampled = " << c.negatives_sampled << "\n"
        << "refresh_interval = " << c.refresh_interval << "\n"
        << "seed = " << c.seed << "\n"
        << "adamw.beta1 = " << shortest(c.adamw.beta1) << "\n"
        << "adamw.beta2 = " << shortest(c.adamw.beta2) << "\n"
        << "adamw.eps = " << shortest(c.adamw.eps) << "\n"
        << "adamw.weight_decay = " << shortest(c.adamw.weight_decay) << "\n"
        << "checkpoint_every = " << c.checkpoint_every << "\n";
    return out.str();
}

InfoNceResult infonce_loss(std::span<const double> query, std::span<const double> positive,
                           const std::vector<std::span<const double>>& negatives, double tau) {
    if (!(tau > 0.0)) throw ContractError("InfoNCE temperature must be > 0");
    if (negatives.empty()) throw ContractError("InfoNCE needs at least one negative");
    const std::size_t d = query.size();
    auto dot_d = [&](std::span<const double> v) {
        if (v.size() != d) throw ContractError("InfoNCE vector width mismatch");
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += query[i] * v[i];
        return acc;
    };
    std::vector<double> logits;
    logits.reserve(negatives.size() + 1);
    logits.push_back(dot_d(positive) / tau);
    for (auto n : negatives) logits.push_back(dot_d(n) / tau);
    const double top = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double z : logits) denom += std::exp(z - top);
    const double log_denom = top + std::log(denom);

    InfoNceResult res;
    res.loss = log_denom - logits[0];
    // grad = (sum_i p_i c_i - positive) / tau
    res.grad.assign(d, 0.0);
    for (std::size_t c = 0; c < logits.size(); ++c) {
        const double p = std::exp(logits[c] - log_denom);
        auto v = c == 0 ? positive : negatives[c - 1];
        for (std::size_t i = 0; i < d; ++i) res.grad[i] += p * v[i];
    }
    for (std::size_t i = 0; i < d; ++i) res.grad[i] = (res.grad[i] - positive[i]) / tau;
    return res;
}

InfoNceResult normalized_infonce(std::span<const double> y, std::span<const double> positive,
                                 const std::vector<std::span<const double>>& negatives, double tau) {
    double sq = 0.0;
    for (double v : y) sq += v * v;
    const double norm = std::sqrt(sq);
    Vec u(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) u[i] = y[i] / norm;
    auto nce = infonce_loss(u, positive, negatives, tau);
    // Through the normalization: dL/dy = (g - u (u . g)) / |y|.
    double ug = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) ug += u[i] * nce.grad[i];
    for (std::size_t i = 0; i < u.size(); ++i) nce.grad[i] = (nce.grad[i] - u[i] * ug) / norm;
    return nce;
}

double lr_at(std::size_t step, std::size_t total_steps, double lr) {
    if (total_steps == 0) throw ContractError("lr_at needs total_steps >= 1");
    if (step > total_steps) throw ContractError("lr_at: step beyond total_steps");
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

NegativePool mine_negatives(const AdapterHead* head, const EmbeddingMatrix& query_embs,
                            const EmbeddingMatrix& doc_store, const RelevanceLabels& qrels,
                            std::size_t mined) {
    NegativePool pool;
    if (query_embs.empty() || mined == 0) return pool;
    static const std::map<std::string, int> kNone;
    std::size_t max_pos = 0;
    for (std::size_t q = 0; q < query_embs.count(); ++q) {
        auto it = qrels.find(query_embs.id(q));
        const auto& pos = it == qrels.end() ? kNone : it->second;
        if (doc_store.count() < mined + pos.size()) {
            throw ContractError("store of " + std::to_string(doc_store.count()) +
                                " chunks cannot supply " + std::to_string(mined) +
                                " negatives for query " + query_embs.id(q) + " with " +
                                std::to_string(pos.size()) + " positives");
        }
        max_pos = std::max(max_pos, pos.size());
    }
    const auto transformed = transform_queries(head, query_embs);
    const auto hits = top_k(transformed, doc_store, mined + max_pos);
    for (std::size_t q = 0; q < transformed.count(); ++q) {
        auto it = qrels.find(transformed.id(q));
        const auto& pos = it == qrels.end() ? kNone : it->second;
        auto& negs = pool[transformed.id(q)];
        for (const auto& h : hits[q]) {
            if (negs.size() == mined) break;
            if (!pos.count(h.id)) negs.push_back(h.id);
        }
    }
    return pool;
}

AdamW::AdamW(const AdamWConfig& config, const AdapterHead& head) : config_(config) {
    for (auto t : head_parameters(head)) {
        m_.emplace_back(t.size(), 0.0);
        v_.emplace_back(t.size(), 0.0);
    }
}

void AdamW::configure(const AdamWConfig& config, const AdapterHead& head) {
    config_ = config;
    if (m_.empty()) *this = AdamW(config, head);
}

void AdamW::step(AdapterHead& head, const std::vector<Vec>& grads, double lr) {
    auto params = head_parameters(head);
    if (grads.size() != params.size() || m_.size() != params.size()) {
        throw ContractError("AdamW: gradient tensors do not match parameters");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p].size()) throw ContractError("AdamW: tensor size mismatch");
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double g = grads[p][i];
            m_[p][i] = config_.beta1 * m_[p][i] + (1.0 - config_.beta1) * g;
            v_[p][i] = config_.beta2 * v_[p][i] + (1.0 - config_.beta2) * g * g;
            const double mhat = m_[p][i] / bc1;
            const double vhat = v_[p][i] / bc2;
            double theta = params[p][i];
            theta -= lr * config_.weight_decay * theta;
            theta -= lr * mhat / (std::sqrt(vhat) + config_.eps);
            params[p][i] = static_cast<float>(theta);
        }
    }
}

void AdamW::restore(std::size_t t, std::vector<Vec> m, std::vector<Vec> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) {
        throw FormatError("optimizer state does not match head shape");
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size()) {
            throw FormatError("optimizer state does not match head shape");
        }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
}

std::vector<TrainingPair> training_pairs(const TrainData& data) {
    std::vector<TrainingPair> pairs;
    for (std::size_t q = 0; q < data.queries->count(); ++q) {
        const auto& qid = data.queries->id(q);
        auto it = data.qrels->find(qid);
        if (it == data.qrels->end() || it->second.empty()) {
            throw ContractError("training query " + qid + " has no positive in qrels");
        }
        for (const auto& [doc, grade] : it->second) {
            auto row = data.docs->find(doc);
            if (!row) throw ContractError("positive " + doc + " of query " + qid + " is not in the store");
            pairs.push_back({q, *row});
        }
    }
    return pairs;
}

TrainState init_train_state(const TrainConfig& config, AdapterHead head) {
    config.validate();
    TrainState state;
    state.optimizer = AdamW(config.adamw, head);
    state.head = std::move(head);
    std::mt19937_64 rng(config.seed);
    std::ostringstream ss;
    ss << rng;
    state.rng_state = ss.str();
    return state;
}

namespace {

Vec row_as_vec(const EmbeddingMatrix& m, std::size_t r) {
    auto row = m.row(r);
    return Vec(row.begin(), row.end());
}

double train_ndcg10(const AdapterHead& head, const TrainData& data) {
    auto report = evaluate(&head, *data.queries, *data.docs, *data.qrels, {10});
    return report.means.at("ndcg@10");
}

}  // namespace

TrainState train(const TrainConfig& config, TrainState state, const TrainData& data,
                 const TrainHooks& hooks) {
    config.validate();
    if (!data.queries || !data.docs || !data.qrels) throw ContractError("train: incomplete data");
    if (data.queries->dim() != head_dim(state.head) || data.docs->dim() != head_dim(state.head)) {
        throw ContractError("train: embedding width does not match head dim");
    }
    state.optimizer.configure(config.adamw, state.head);
    const auto canonical = training_pairs(data);
    if (canonical.empty()) throw ContractError("train: no training pairs");

    std::mt19937_64 rng;
    {
        std::istringstream ss(state.rng_state);
        ss >> rng;
        if (!ss) throw FormatError("train: unreadable RNG state");
    }
    auto reshuffle = [&]() {
        state.epoch = canonical;
        std::shuffle(state.epoch.begin(), state.epoch.end(), rng);
        state.cursor = 0;
    };
    if (state.epoch.empty()) reshuffle();

    const EmbeddingMatrix& docs = *data.docs;

    auto checkpoint = [&](const std::string& name) {
        if (hooks.checkpoint_dir.empty()) return;
        std::ostringstream ss;
        ss << rng;
        state.rng_state = ss.str();
        save_checkpoint(state, hooks.checkpoint_dir / name);
    };

    while (state.step < config.total_steps) {
        const std::size_t s = state.step;
        const bool refresh = s % config.refresh_interval == 0;
        double ndcg = 0.0;
        if (refresh) {
            try {
                if (s == 0 && hooks.initial_negatives) {
                    for (const auto& [qid, negs] : *hooks.initial_negatives) {
                        auto pos = data.qrels->find(qid);
                        if (pos == data.qrels->end()) continue;
                        for (const auto& n : negs) {
                            if (pos->second.count(n)) {
                                throw ContractError("initial negatives of " + qid +
                                                    " contain labeled positive " + n);
                            }
                        }
                    }
                    state.negatives = *hooks.initial_negatives;
                } else {
                    state.negatives = mine_negatives(&state.head, *data.queries, docs, *data.qrels,
                                                     config.negatives_mined);
                }
                ndcg = train_ndcg10(state.head, data);
            } catch (const NumericError& e) {
                throw NumericError("negative refresh at step " + std::to_string(s) + ": " + e.what());
            }
            state.refresh_steps.push_back(s);
            if (hooks.on_refresh) hooks.on_refresh(s, state.head, state.negatives);
        }

        std::vector<Vec> xs, upstream;
        std::vector<std::string> batch_ids;
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            if (state.cursor >= state.epoch.size()) reshuffle();
            const TrainingPair pair = state.epoch[state.cursor++];
            const auto& qid = data.queries->id(pair.query_row);
            batch_ids.push_back(qid);

            auto pool_it = state.negatives.find(qid);
            if (pool_it == state.negatives.end() || pool_it->second.size() < config.negatives_sampled) {
                throw ContractError("negative pool for query " + qid + " has fewer than " +
                                    std::to_string(config.negatives_sampled) + " entries");
            }
            std::vector<std::size_t> idx(pool_it->second.size());
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            for (std::size_t i = 0; i < config.negatives_sampled; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
                std::swap(idx[i], idx[pick(rng)]);
            }
            std::vector<Vec> neg_vecs;
            for (std::size_t i = 0; i < config.negatives_sampled; ++i) {
                const auto& nid = pool_it->second[idx[i]];
                auto row = docs.find(nid);
                if (!row) throw ContractError("negative " + nid + " is not in the store");
                neg_vecs.push_back(row_as_vec(docs, *row));
            }
            std::vector<std::span<const double>> neg_spans(neg_vecs.begin(), neg_vecs.end());

            Vec x = row_as_vec(*data.queries, pair.query_row);
            const Vec pos = row_as_vec(docs, pair.doc_row);
            auto nce = normalized_infonce(forward(state.head, x), pos, neg_spans, config.temperature);
            loss_sum += nce.loss;
            Vec gy = std::move(nce.grad);
            for (auto& g : gy) g /= static_cast<double>(config.batch_size);
            xs.push_back(std::move(x));
            upstream.push_back(std::move(gy));
        }
        const double loss = loss_sum / static_cast<double>(config.batch_size);
        if (!std::isfinite(loss)) {
            std::string ids;
            for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ",") + id;
            throw NumericError("non-finite loss at step " + std::to_string(s) + " (batch queries: " +
                               ids + ")");
        }
        const double lr = lr_at(s, config.total_steps, config.lr);
        if (refresh) state.history.push_back({s, lr, loss, ndcg});

        auto grads = backward(state.head, xs, upstream);
        state.optimizer.step(state.head, grads.params, lr);
        state.last_loss = loss;
        state.step = s + 1;

        if (config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0 &&
            state.step < config.total_steps) {
            checkpoint("step-" + std::to_string(state.step));
        }
    }

    if (state.history.empty() || state.history.back().step != config.total_steps) {
        state.history.push_back({config.total_steps, 0.0, state.last_loss,
                                 train_ndcg10(state.head, data)});
        if (hooks.on_refresh) hooks.on_refresh(config.total_steps, state.head, state.negatives);
    }
    std::ostringstream ss;
    ss << rng;
    state.rng_state = ss.str();
    checkpoint("final");
    return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_head(state.head, dir / "head.bin");
    nlohmann::ordered_json j;
    j["step"] = state.step;
    j["adam_t"] = state.optimizer.steps_taken();
    j["adam_m"] = state.optimizer.first_moment();
    j["adam_v"] = state.optimizer.second_moment();
    j["rng"] = state.rng_state;
    j["negatives"] = state.negatives;
    auto epoch = nlohmann::ordered_json::array();
    for (const auto& p : state.epoch) epoch.push_back({p.query_row, p.doc_row});
    j["epoch"] = std::move(epoch);
    j["cursor"] = state.cursor;
    j["last_loss"] = state.last_loss;
    auto hist = nlohmann::ordered_json::array();
    for (const auto& h : state.history) hist.push_back({h.step, h.lr, h.loss, h.train_ndcg10});
    j["history"] = std::move(hist);
    j["refresh_steps"] = state.refresh_steps;
    write_file_atomic(dir / "state.json", j.dump() + "\n");
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
    TrainState state;
    state.head = load_head(dir / "head.bin");
    try {
        auto j = Json::parse(read_file(dir / "state.json"));
        state.step = j.at("step").get<std::size_t>();
        state.optimizer = AdamW(AdamWConfig{}, state.head);
        state.optimizer.restore(j.at("adam_t").get<std::size_t>(),
                                j.at("adam_m").get<std::vector<Vec>>(),
                                j.at("adam_v").get<std::vector<Vec>>());
        state.rng_state = j.at("rng").get<std::string>();
        state.negatives = j.at("negatives").get<NegativePool>();
        for (const auto& p : j.at("epoch")) {
            state.epoch.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
        }
        state.cursor = j.at("cursor").get<std::size_t>();
        state.last_loss = j.at("last_loss").get<double>();
        for (const auto& h : j.at("history")) {
            state.history.push_back({h.at(0).get<std::size_t>(), h.at(1).get<double>(),
                                     h.at(2).get<double>(), h.at(3).get<double>()});
        }
        state.refresh_steps = j.at("refresh_steps").get<std::vector<std::size_t>>();
    } catch (const Json::exception& e) {
        throw FormatError((dir / "state.json").string() + ": " + e.what());
    }
    return state;
}

std::string history_tsv(const std::vector<MetricPoint>& history) {
    std::ostringstream out;
    out << "step\tlr\tloss\ttrain_ndcg@10\n";
    char buf[160];
    for (const auto& h : history) {
        std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\n", h.step, h.lr, h.loss, h.train_ndcg10);
        out << buf;
    }
    return out.str();
}

void save_negatives(const NegativePool& pool, const std::filesystem::path& path) {
    std::string body;
    for (const auto& [qid, negs] : pool) {
        nlohmann::ordered_json j;
        j["query_id"] = qid;
        j["negatives"] = negs;
        body += j.dump() + "\n";
    }
    write_file_atomic(path, body);
}

NegativePool load_negatives(const std::filesystem::path& path) {
    NegativePool pool;
    for_each_jsonl(path, [&](const Json& obj, std::size_t line) {
        auto qid = json_string(obj, "query_id", path.string(), line);
        auto it = obj.find("negatives");
        if (it == obj.end() || !it->is_array()) {
            throw FormatError(path.string() + ":" + std::to_string(line) + ": missing negatives array");
        }
        pool[qid] = it->get<std::vector<std::string>>();
    });
    return pool;
}

}  // namespace qadapt
