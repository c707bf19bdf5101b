#include "qadapt/embed_client.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <random>
#include <thread>
#include <unordered_set>

#include "http_json.hpp"
#include "qadapt/errors.hpp"

namespace qadapt {

static_assert(std::endian::native == std::endian::little, "cache files store host floats");

void EmbedderSpec::validate() const {
    if (name.empty()) throw ContractError("embedder spec without a name");
    if (dim == 0) throw ContractError("embedder " + name + ": dim must be positive");
    if (max_batch == 0) throw ContractError("embedder " + name + ": max_batch must be at least 1");
    if (model.empty()) throw ContractError("embedder " + name + ": model is empty");
}

EmbedderSpec parse_embedder_spec(const Json& obj) {
    if (!obj.is_object()) throw FormatError("embedder spec must be a JSON object");
    EmbedderSpec s;
    try {
        s.name = obj.at("name").get<std::string>();
        s.model = obj.value("model", s.name);
        s.endpoint = obj.value("endpoint", std::string());
        s.dim = obj.at("dim").get<std::size_t>();
        s.max_batch = obj.value("max_batch", s.max_batch);
        s.auth_env_var = obj.value("auth_env_var", std::string());
        s.query_prefix = obj.value("query_prefix", std::string());
        s.doc_prefix = obj.value("doc_prefix", std::string());
    } catch (const Json::exception& e) {
        throw FormatError(std::string("embedder spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::vector<EmbedderSpec> load_embedder_specs(const std::filesystem::path& path) {
    Json doc;
    try {
        doc = Json::parse(read_file(path));
    } catch (const Json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    const Json& list = doc.is_object() && doc.contains("embedders") ? doc["embedders"] : doc;
    if (!list.is_array()) throw FormatError(path.string() + ": expected a list of embedder specs");
    std::vector<EmbedderSpec> specs;
    std::unordered_set<std::string> names;
    for (const auto& item : list) {
        specs.push_back(parse_embedder_spec(item));
        if (!names.insert(specs.back().name).second) {
            throw FormatError(path.string() + ": duplicate embedder name " + specs.back().name);
        }
    }
    return specs;
}

namespace {

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
        out.push_back(ok ? c : '_');
    }
    return out.empty() ? "_" : out;
}

std::uint64_t hash64(const std::string& s) {
    const std::string h = sha256_hex(s);
    return std::stoull(h.substr(0, 16), nullptr, 16);
}

}  // namespace

std::vector<std::vector<float>> HttpEmbeddingBackend::embed_batch(const EmbedderSpec& spec,
                                                                  const std::vector<std::string>& texts) {
    const std::string who = "embedder " + spec.name;
    const Json reply = detail::post_json(who, spec.endpoint, spec.auth_env_var,
                                         {{"model", spec.model}, {"input", texts}}, timeout_);
    std::vector<std::vector<float>> rows(texts.size());
    std::vector<bool> seen(texts.size(), false);
    try {
        const Json& data = reply.at("data");
        if (!data.is_array() || data.size() != texts.size()) {
            throw TransportError(who + ": expected " + std::to_string(texts.size()) + " embeddings in response");
        }
        for (const auto& item : data) {
            const auto index = item.at("index").get<std::size_t>();
            if (index >= texts.size() || seen[index]) {
                throw TransportError(who + ": bad index " + std::to_string(index));
            }
            seen[index] = true;
            rows[index] = item.at("embedding").get<std::vector<float>>();
            if (rows[index].size() != spec.dim) {
                throw ContractError(who + ": got dimension " + std::to_string(rows[index].size()) +
                                    ", spec says " + std::to_string(spec.dim));
            }
        }
    } catch (const Json::exception& e) {
        throw TransportError(who + ": malformed response: " + e.what());
    }
    return rows;
}

std::string HttpEmbeddingBackend::cache_namespace(const EmbedderSpec& spec) const {
    return sanitize(spec.model);
}

std::vector<double> MockEmbeddingBackend::token_vector(const std::string& token, std::size_t dim) const {
    std::mt19937_64 rng(hash64(std::to_string(seed_) + '\x1f' + token));
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(dim);
    for (auto& x : v) x = g(rng);
    return v;
}

std::vector<double> MockEmbeddingBackend::rotation(std::size_t dim) const {
    std::mt19937_64 rng(hash64("rotation/" + std::to_string(seed_) + "/" + std::to_string(dim)));
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> r(dim * dim);
    for (auto& x : r) x = g(rng);
    // Modified Gram-Schmidt over rows.
    for (std::size_t i = 0; i < dim; ++i) {
        double* ri = &r[i * dim];
        for (std::size_t j = 0; j < i; ++j) {
            const double* rj = &r[j * dim];
            double p = 0;
            for (std::size_t c = 0; c < dim; ++c) p += ri[c] * rj[c];
            for (std::size_t c = 0; c < dim; ++c) ri[c] -= p * rj[c];
        }
        double n = 0;
        for (std::size_t c = 0; c < dim; ++c) n += ri[c] * ri[c];
        n = std::sqrt(n);
        for (std::size_t c = 0; c < dim; ++c) ri[c] /= n;
    }
    return r;
}

std::vector<std::vector<float>> MockEmbeddingBackend::embed_batch(const EmbedderSpec& spec,
                                                                  const std::vector<std::string>& texts) {
    ++calls_;
    const std::size_t d = spec.dim;
    std::vector<double> rot;
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& raw : texts) {
        std::string_view text = raw;
        const bool rotate = !spec.query_prefix.empty() && text.starts_with(spec.query_prefix);
        if (rotate) text.remove_prefix(spec.query_prefix.size());
        if (!spec.doc_prefix.empty() && text.starts_with(spec.doc_prefix)) text.remove_prefix(spec.doc_prefix.size());

        std::vector<double> v(d, 0.0);
        auto tokens = tokenize(text);
        if (tokens.empty()) tokens.push_back("\x02" + std::string(text));
        for (const auto& t : tokens) {
            const auto tv = token_vector(t, d);
            for (std::size_t j = 0; j < d; ++j) v[j] += tv[j];
        }
        if (rotate) {
            if (rot.empty()) rot = rotation(d);
            std::vector<double> w(d, 0.0);
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) w[i] += rot[i * d + j] * v[j];
            }
            v = std::move(w);
        }
        out.emplace_back(v.begin(), v.end());
    }
    return out;
}

std::string MockEmbeddingBackend::cache_namespace(const EmbedderSpec& spec) const {
    return "mock-" + std::to_string(seed_) + "-" + sanitize(spec.model);
}

EmbedClient::EmbedClient(EmbedderSpec spec, std::shared_ptr<EmbeddingBackend> backend,
                         EmbedClientOptions options)
    : spec_(std::move(spec)), backend_(std::move(backend)), options_(std::move(options)) {
    spec_.validate();
    if (!backend_) throw ContractError("embed client needs a backend");
    if (options_.max_in_flight == 0) options_.max_in_flight = 1;
    namespace_ = backend_->cache_namespace(spec_);
}

EmbedStats EmbedClient::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::filesystem::path EmbedClient::cache_path(const std::string& text) const {
    const std::string h = sha256_hex(text);
    return options_.cache_dir / namespace_ / h.substr(0, 2) / h;
}

bool EmbedClient::cache_read(const std::string& text, std::vector<float>& row) const {
    if (options_.cache_dir.empty()) return false;
    std::ifstream in(cache_path(text), std::ios::binary);
    if (!in) return false;
    row.assign(spec_.dim, 0.0f);
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    // A truncated or oversized entry is treated as a miss and refetched.
    if (in.gcount() != static_cast<std::streamsize>(row.size() * sizeof(float))) return false;
    return in.peek() == std::char_traits<char>::eof();
}

void EmbedClient::cache_write(const std::string& text, const std::vector<float>& row) {
    if (options_.cache_dir.empty()) return;
    write_file_atomic(cache_path(text),
                      std::string_view(reinterpret_cast<const char*>(row.data()), row.size() * sizeof(float)));
}

std::vector<std::vector<float>> EmbedClient::fetch_with_retry(const std::vector<std::string>& batch) {
    std::string last;
    for (std::size_t attempt = 0;; ++attempt) {
        {
            std::lock_guard lock(mutex_);
            ++stats_.requests;
        }
        try {
            auto rows = backend_->embed_batch(spec_, batch);
            if (rows.size() != batch.size()) {
                throw TransportError("embedder " + spec_.name + ": backend returned " +
                                     std::to_string(rows.size()) + " rows for " + std::to_string(batch.size()) +
                                     " texts");
            }
            for (auto& r : rows) {
                if (r.size() != spec_.dim) {
                    throw ContractError("embedder " + spec_.name + ": got dimension " + std::to_string(r.size()) +
                                        ", spec says " + std::to_string(spec_.dim));
                }
                double n = 0;
                for (float x : r) n += static_cast<double>(x) * x;
                n = std::sqrt(n);
                if (!(n > 0) || !std::isfinite(n)) {
                    throw ContractError("embedder " + spec_.name + " returned a zero or non-finite embedding");
                }
                for (auto& x : r) x = static_cast<float>(x / n);
            }
            return rows;
        } catch (const TransportError& e) {
            last = e.what();
        }
        if (attempt >= options_.retries) break;
        std::this_thread::sleep_for(options_.backoff_base * (1LL << attempt));
    }
    throw TransportError(last + " (gave up after " + std::to_string(options_.retries + 1) + " attempts)");
}

std::vector<std::vector<float>> EmbedClient::embed_unique(const std::vector<std::string>& texts) {
    std::vector<std::vector<float>> rows(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (!cache_read(texts[i], rows[i])) missing.push_back(i);
    }
    {
        std::lock_guard lock(mutex_);
        stats_.cache_hits += texts.size() - missing.size();
        stats_.fetched += missing.size();
    }
    if (missing.empty()) return rows;

    const std::size_t n_batches = (missing.size() + spec_.max_batch - 1) / spec_.max_batch;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&]() {
        for (;;) {
            if (failed.load()) return;
            const std::size_t b = next.fetch_add(1);
            if (b >= n_batches) return;
            const std::size_t lo = b * spec_.max_batch;
            const std::size_t hi = std::min(missing.size(), lo + spec_.max_batch);
            std::vector<std::string> batch;
            for (std::size_t i = lo; i < hi; ++i) batch.push_back(texts[missing[i]]);
            try {
                auto got = fetch_with_retry(batch);
                std::lock_guard lock(mutex_);
                for (std::size_t i = lo; i < hi; ++i) {
                    rows[missing[i]] = std::move(got[i - lo]);
                    cache_write(texts[missing[i]], rows[missing[i]]);
                }
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
                return;
            }
        }
    };

    const std::size_t n_threads = std::min(options_.max_in_flight, n_batches);
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
    return rows;
}

EmbeddingMatrix EmbedClient::embed_records(const std::vector<std::string>& ids,
                                           const std::vector<std::string>& texts, TextRole role) {
    if (ids.size() != texts.size()) throw ContractError("embed_records: ids and texts differ in length");
    const std::string& prefix = role == TextRole::query ? spec_.query_prefix : spec_.doc_prefix;

    std::vector<std::string> unique;
    std::vector<std::size_t> slot(texts.size());
    std::unordered_map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto [it, fresh] = seen.emplace(prefix + texts[i], unique.size());
        if (fresh) unique.push_back(it->first);
        slot[i] = it->second;
    }
    {
        std::lock_guard lock(mutex_);
        stats_.requested += texts.size();
    }
    const auto rows = embed_unique(unique);

    std::vector<float> data;
    data.reserve(texts.size() * spec_.dim);
    for (std::size_t i = 0; i < texts.size(); ++i) data.insert(data.end(), rows[slot[i]].begin(), rows[slot[i]].end());
    return EmbeddingMatrix(spec_.dim, ids, std::move(data));
}

EmbeddingMatrix EmbedClient::embed_texts(const std::vector<std::string>& texts, TextRole role) {
    std::vector<std::string> ids;
    ids.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(std::to_string(i));
    return embed_records(ids, texts, role);
}

std::size_t EmbedClient::embed_corpus(const std::filesystem::path& chunks_jsonl,
                                      const std::filesystem::path& out) {
    MatrixWriter writer(out, spec_.dim);
    std::unordered_set<std::string> seen;
    std::vector<std::string> ids, texts;
    const std::size_t group = spec_.max_batch * options_.max_in_flight * 4;

    auto flush = [&]() {
        if (ids.empty()) return;
        const auto m = embed_records(ids, texts, TextRole::document);
        for (std::size_t r = 0; r < m.count(); ++r) writer.append(m.id(r), m.row(r));
        ids.clear();
        texts.clear();
    };
    const std::string source = chunks_jsonl.string();
    for_each_jsonl(chunks_jsonl, [&](const Json& obj, std::size_t line) {
        std::string id = json_string(obj, "id", source, line);
        if (!seen.insert(id).second) throw FormatError(source + ":" + std::to_string(line) + ": duplicate chunk id " + id);
        ids.push_back(std::move(id));
        texts.push_back(json_string(obj, "text", source, line));
        if (ids.size() >= group) flush();
    });
    flush();
    writer.finish();
    return writer.count();
}

}  // namespace qadapt
