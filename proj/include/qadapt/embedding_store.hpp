#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace qadapt {

/// Dense row-major float32 matrix whose rows carry unique string ids.
///
/// Used both for the frozen document store and for every batch of query
/// embeddings. Instances are immutable once built apart from `normalize`,
/// which the owner calls before publishing the matrix.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;

    /// Throws ContractError if dim == 0, data.size() != ids.size() * dim,
    /// or ids contain duplicates.
    EmbeddingMatrix(std::size_t dim, std::vector<std::string> ids, std::vector<float> data);

    /// Empty matrix of the given width.
    explicit EmbeddingMatrix(std::size_t dim);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t count() const noexcept { return ids_.size(); }
    bool empty() const noexcept { return ids_.empty(); }

    const std::vector<std::string>& ids() const noexcept { return ids_; }
    const std::string& id(std::size_t row) const { return ids_.at(row); }
    const std::vector<float>& data() const noexcept { return data_; }

    std::span<const float> row(std::size_t r) const {
        return {data_.data() + r * dim_, dim_};
    }

    std::optional<std::size_t> find(const std::string& id) const;

    /// Appends one row. ContractError on width mismatch or duplicate id.
    void append(const std::string& id, std::span<const float> values);

    /// Scales every row to unit L2 norm. ContractError naming the first
    /// zero (or non-finite) row.
    void normalize();

    /// Rows selected by id, in the requested order.
    EmbeddingMatrix select(const std::vector<std::string>& ids) const;

    friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
        return a.dim_ == b.dim_ && a.ids_ == b.ids_ && a.data_ == b.data_;
    }

private:
    std::size_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct SearchHit {
    std::string id;
    float score = 0.0f;
    std::size_t rank = 0;  // 1-based

    friend bool operator==(const SearchHit&, const SearchHit&) = default;
};

using HitList = std::vector<SearchHit>;

/// Exact top-k by dot product (cosine for unit rows). Ties are ordered by
/// ascending id. Products accumulate in double. `threads` > 1 splits the
/// query set; output order is by query row either way.
std::vector<HitList> top_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs,
                           std::size_t k, std::size_t threads = 1);

/// `<path>` holds the "EMB1" binary payload, `<path>.ids.jsonl` the row ids.
void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path);
EmbeddingMatrix load_matrix(const std::filesystem::path& path);

std::filesystem::path ids_sidecar_path(const std::filesystem::path& path);

/// Streams rows into an `.emb` file without holding the matrix in memory.
/// The header count is patched in `finish()`; an unfinished writer leaves
/// only `.partial` files behind.
class MatrixWriter {
public:
    MatrixWriter(const std::filesystem::path& path, std::size_t dim);
    ~MatrixWriter();

    MatrixWriter(const MatrixWriter&) = delete;
    MatrixWriter& operator=(const MatrixWriter&) = delete;

    void append(const std::string& id, std::span<const float> values);
    void finish();

    std::size_t count() const noexcept { return count_; }

private:
    struct Files;
    std::filesystem::path path_;
    std::size_t dim_;
    std::size_t count_ = 0;
    bool finished_ = false;
    std::unique_ptr<Files> files_;
};

double dot(std::span<const float> a, std::span<const float> b);

}  // namespace qadapt
