#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "qadapt/embedding_store.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

/// One embedding service. `auth_env_var` names the environment variable
/// that holds the API key; empty means the endpoint needs no key.
struct EmbedderSpec {
    std::string name;
    std::string endpoint;
    std::string model;
    std::size_t dim = 0;
    std::size_t max_batch = 64;
    std::string auth_env_var;
    std::string query_prefix;
    std::string doc_prefix;

    void validate() const;
};

EmbedderSpec parse_embedder_spec(const Json& obj);

/// Accepts either a JSON array of specs or `{"embedders": [...]}`.
std::vector<EmbedderSpec> load_embedder_specs(const std::filesystem::path& path);

enum class TextRole { query, document };

/// Turns one batch of already-prefixed texts into raw vectors, in input
/// order. Implementations raise TransportError for failures worth
/// retrying; CredentialError and ContractError are final.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::vector<std::vector<float>> embed_batch(const EmbedderSpec& spec,
                                                        const std::vector<std::string>& texts) = 0;
    /// Directory name under the cache root; distinct backends must not share vectors.
    virtual std::string cache_namespace(const EmbedderSpec& spec) const = 0;
};

/// POST {"model", "input"} to `spec.endpoint`, expecting
/// {"data": [{"index", "embedding"}]}.
class HttpEmbeddingBackend : public EmbeddingBackend {
public:
    explicit HttpEmbeddingBackend(std::chrono::seconds timeout = std::chrono::seconds(120))
        : timeout_(timeout) {}

    std::vector<std::vector<float>> embed_batch(const EmbedderSpec& spec,
                                                const std::vector<std::string>& texts) override;
    std::string cache_namespace(const EmbedderSpec& spec) const override;

private:
    std::chrono::seconds timeout_;
};

/// Offline stand-in. A text maps to the normalized sum of seeded Gaussian
/// vectors of its tokens. Texts that start with a non-empty
/// `spec.query_prefix` are embedded without the prefix and then multiplied
/// by a fixed random rotation, which gives adapters something to undo.
class MockEmbeddingBackend : public EmbeddingBackend {
public:
    explicit MockEmbeddingBackend(std::uint64_t seed = 0) : seed_(seed) {}

    std::vector<std::vector<float>> embed_batch(const EmbedderSpec& spec,
                                                const std::vector<std::string>& texts) override;
    std::string cache_namespace(const EmbedderSpec& spec) const override;

    std::size_t calls() const noexcept { return calls_.load(); }

    /// The rotation applied to query-side texts, row-major dim x dim.
    std::vector<double> rotation(std::size_t dim) const;

private:
    std::vector<double> token_vector(const std::string& token, std::size_t dim) const;

    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

struct EmbedClientOptions {
    std::filesystem::path cache_dir;  // empty disables the disk cache
    std::size_t max_in_flight = 4;
    std::size_t retries = 3;
    std::chrono::milliseconds backoff_base{1000};  // doubled after every failed attempt
};

struct EmbedStats {
    std::size_t requested = 0;   // texts asked for, duplicates included
    std::size_t cache_hits = 0;  // distinct texts served from disk
    std::size_t fetched = 0;     // distinct texts sent to the backend
    std::size_t requests = 0;    // batches sent, retries included
};

class EmbedClient {
public:
    EmbedClient(EmbedderSpec spec, std::shared_ptr<EmbeddingBackend> backend,
                EmbedClientOptions options = {});

    const EmbedderSpec& spec() const noexcept { return spec_; }

    /// Rows are unit-norm and in input order; ids are "0", "1", ...
    EmbeddingMatrix embed_texts(const std::vector<std::string>& texts,
                                TextRole role = TextRole::document);

    /// Same as embed_texts with caller-supplied row ids.
    EmbeddingMatrix embed_records(const std::vector<std::string>& ids,
                                  const std::vector<std::string>& texts, TextRole role);

    /// Streams a chunk JSONL file into an `.emb` matrix plus sidecar.
    /// Already-cached chunks cost no requests, so an interrupted run
    /// resumes where it stopped. Returns the number of rows written.
    std::size_t embed_corpus(const std::filesystem::path& chunks_jsonl,
                             const std::filesystem::path& out);

    EmbedStats stats() const;

private:
    std::vector<std::vector<float>> embed_unique(const std::vector<std::string>& texts);
    std::filesystem::path cache_path(const std::string& text) const;
    bool cache_read(const std::string& text, std::vector<float>& row) const;
    void cache_write(const std::string& text, const std::vector<float>& row);
    std::vector<std::vector<float>> fetch_with_retry(const std::vector<std::string>& batch);

    EmbedderSpec spec_;
    std::shared_ptr<EmbeddingBackend> backend_;
    EmbedClientOptions options_;
    std::string namespace_;
    mutable std::mutex mutex_;
    EmbedStats stats_;
};

}  // namespace qadapt
