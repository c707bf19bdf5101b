#include "qadapt/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const unsigned char* p, int n) {
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void put_floats(std::string& out, std::span<const float> values) {
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

std::string header(std::size_t dim, std::uint64_t count) {
    std::string h(kMagic, 4);
    put_u32(h, static_cast<std::uint32_t>(dim));
    put_u64(h, count);
    return h;
}

std::string id_line(std::size_t row, const std::string& id) {
    nlohmann::ordered_json j;
    j["row"] = row;
    j["id"] = id;
    return j.dump() + "\n";
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ContractError("embedding dim must be positive");
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t dim, std::vector<std::string> ids,
                                 std::vector<float> data)
    : dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
    if (dim_ == 0) throw ContractError("embedding dim must be positive");
    if (data_.size() != ids_.size() * dim_) {
        throw ContractError("embedding data size " + std::to_string(data_.size()) +
                            " != count*dim " + std::to_string(ids_.size() * dim_));
    }
    index_.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (!index_.emplace(ids_[i], i).second) {
            throw ContractError("duplicate embedding id: " + ids_[i]);
        }
    }
}

std::optional<std::size_t> EmbeddingMatrix::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void EmbeddingMatrix::append(const std::string& id, std::span<const float> values) {
    if (dim_ == 0) throw ContractError("append to matrix without dim");
    if (values.size() != dim_) {
        throw ContractError("row width " + std::to_string(values.size()) + " != dim " +
                            std::to_string(dim_));
    }
    if (!index_.emplace(id, ids_.size()).second) {
        throw ContractError("duplicate embedding id: " + id);
    }
    ids_.push_back(id);
    data_.insert(data_.end(), values.begin(), values.end());
}

void EmbeddingMatrix::normalize() {
    for (std::size_t r = 0; r < count(); ++r) {
        float* row = data_.data() + r * dim_;
        double sq = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) sq += static_cast<double>(row[j]) * row[j];
        double norm = std::sqrt(sq);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw ContractError("cannot normalize zero or non-finite row " + std::to_string(r) +
                                " (id " + ids_[r] + ")");
        }
        for (std::size_t j = 0; j < dim_; ++j) row[j] = static_cast<float>(row[j] / norm);
    }
}

EmbeddingMatrix EmbeddingMatrix::select(const std::vector<std::string>& ids) const {
    std::vector<float> data;
    data.reserve(ids.size() * dim_);
    for (const auto& id : ids) {
        auto r = find(id);
        if (!r) throw ContractError("unknown embedding id: " + id);
        auto values = row(*r);
        data.insert(data.end(), values.begin(), values.end());
    }
    return EmbeddingMatrix(dim_, ids, std::move(data));
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
}

std::vector<HitList> top_k(const EmbeddingMatrix& queries, const EmbeddingMatrix& docs,
                           std::size_t k, std::size_t threads) {
    if (k == 0) throw ContractError("top_k requires k >= 1");
    if (queries.count() > 0 && docs.count() > 0 && queries.dim() != docs.dim()) {
        throw ContractError("top_k dim mismatch: queries " + std::to_string(queries.dim()) +
                            " vs docs " + std::to_string(docs.dim()));
    }
    const std::size_t n_docs = docs.count();
    const std::size_t keep = std::min(k, n_docs);

    // Position of each doc in ascending id order, so tie-breaks compare ints.
    std::vector<std::size_t> by_id(n_docs);
    std::iota(by_id.begin(), by_id.end(), 0);
    std::sort(by_id.begin(), by_id.end(),
              [&](std::size_t a, std::size_t b) { return docs.id(a) < docs.id(b); });
    std::vector<std::size_t> id_rank(n_docs);
    for (std::size_t i = 0; i < n_docs; ++i) id_rank[by_id[i]] = i;

    std::vector<HitList> results(queries.count());

    auto run = [&](std::size_t begin, std::size_t end) {
        std::vector<std::pair<double, std::size_t>> scored(n_docs);
        auto better = [&](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return id_rank[a.second] < id_rank[b.second];
        };
        for (std::size_t q = begin; q < end; ++q) {
            auto qrow = queries.row(q);
            for (std::size_t d = 0; d < n_docs; ++d) scored[d] = {dot(qrow, docs.row(d)), d};
            std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                              scored.end(), better);
            HitList hits;
            hits.reserve(keep);
            for (std::size_t i = 0; i < keep; ++i) {
                hits.push_back({docs.id(scored[i].second), static_cast<float>(scored[i].first),
                                i + 1});
            }
            results[q] = std::move(hits);
        }
    };

    threads = std::max<std::size_t>(1, std::min(threads, queries.count()));
    if (threads == 1) {
        run(0, queries.count());
    } else {
        std::vector<std::thread> pool;
        std::size_t per = (queries.count() + threads - 1) / threads;
        for (std::size_t t = 0; t < threads; ++t) {
            std::size_t b = t * per, e = std::min(queries.count(), b + per);
            if (b < e) pool.emplace_back(run, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return results;
}

std::filesystem::path ids_sidecar_path(const std::filesystem::path& path) {
    auto p = path;
    p += ".ids.jsonl";
    return p;
}

void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    std::string bytes = header(m.dim(), m.count());
    bytes.reserve(kHeaderBytes + m.data().size() * 4);
    put_floats(bytes, m.data());
    std::string ids;
    for (std::size_t r = 0; r < m.count(); ++r) ids += id_line(r, m.id(r));
    write_file_atomic(path, bytes);
    write_file_atomic(ids_sidecar_path(path), ids);
}

EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    const std::string where = path.string() + ": ";
    if (bytes.size() < kHeaderBytes) throw FormatError(where + "header truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(where + "bad magic");
    auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::size_t dim = get_le(p + 4, 4);
    const std::uint64_t count = get_le(p + 8, 8);
    if (dim == 0) throw FormatError(where + "dim is zero");
    if ((bytes.size() - kHeaderBytes) != count * dim * 4) {
        throw FormatError(where + "payload length " + std::to_string(bytes.size() - kHeaderBytes) +
                          " != count*dim*4 " + std::to_string(count * dim * 4));
    }
    std::vector<float> data(count * dim);
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto bits = static_cast<std::uint32_t>(get_le(p + kHeaderBytes + 4 * i, 4));
        std::memcpy(&data[i], &bits, 4);
    }

    std::vector<std::string> ids;
    ids.reserve(count);
    std::unordered_set<std::string> seen;
    const auto sidecar = ids_sidecar_path(path);
    for_each_jsonl(sidecar, [&](const Json& obj, std::size_t line) {
        auto row = obj.find("row");
        if (row == obj.end() || !row->is_number_unsigned() || row->get<std::size_t>() != ids.size()) {
            throw FormatError(sidecar.string() + ":" + std::to_string(line) + ": row out of order");
        }
        auto id = json_string(obj, "id", sidecar.string(), line);
        if (!seen.insert(id).second) {
            throw FormatError(sidecar.string() + ": duplicate id " + id);
        }
        ids.push_back(std::move(id));
    });
    if (ids.size() != count) {
        throw FormatError(sidecar.string() + ": id count " + std::to_string(ids.size()) +
                          " != header count " + std::to_string(count));
    }
    for (std::size_t r = 0; r < count; ++r) {
        double sq = 0.0;
        for (std::size_t j = 0; j < dim; ++j) sq += static_cast<double>(data[r * dim + j]) * data[r * dim + j];
        if (!(sq > 0.0)) throw FormatError(where + "zero row " + std::to_string(r));
    }
    return EmbeddingMatrix(dim, std::move(ids), std::move(data));
}

struct MatrixWriter::Files {
    std::ofstream payload;
    std::ofstream ids;
};

namespace {
std::filesystem::path partial(const std::filesystem::path& p) {
    auto q = p;
    q += ".partial";
    return q;
}
}  // namespace

MatrixWriter::MatrixWriter(const std::filesystem::path& path, std::size_t dim)
    : path_(path), dim_(dim), files_(std::make_unique<Files>()) {
    if (dim == 0) throw ContractError("embedding dim must be positive");
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    files_->payload.open(partial(path), std::ios::binary | std::ios::trunc);
    files_->ids.open(partial(ids_sidecar_path(path)), std::ios::binary | std::ios::trunc);
    if (!files_->payload || !files_->ids) throw StorageError(path.string(), "cannot open for writing");
    auto h = header(dim, 0);
    files_->payload.write(h.data(), static_cast<std::streamsize>(h.size()));
}

MatrixWriter::~MatrixWriter() = default;

void MatrixWriter::append(const std::string& id, std::span<const float> values) {
    if (finished_) throw ContractError("append after finish");
    if (values.size() != dim_) throw ContractError("row width mismatch in writer");
    std::string bytes;
    put_floats(bytes, values);
    files_->payload.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    auto line = id_line(count_, id);
    files_->ids.write(line.data(), static_cast<std::streamsize>(line.size()));
    if (!files_->payload || !files_->ids) throw StorageError(path_.string(), "write failed");
    ++count_;
}

void MatrixWriter::finish() {
    if (finished_) return;
    auto h = header(dim_, count_);
    files_->payload.seekp(0);
    files_->payload.write(h.data(), static_cast<std::streamsize>(h.size()));
    files_->payload.close();
    files_->ids.close();
    if (files_->payload.fail() || files_->ids.fail()) throw StorageError(path_.string(), "write failed");
    std::filesystem::rename(partial(path_), path_);
    std::filesystem::rename(partial(ids_sidecar_path(path_)), ids_sidecar_path(path_));
    finished_ = true;
}

}  // namespace qadapt
