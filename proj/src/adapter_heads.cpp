#include "qadapt/adapter_heads.hpp"

#include <cmath>
#include <cstring>

#include "qadapt/errors.hpp"
#include "qadapt/text_io.hpp"

namespace qadapt {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// out = W x + b, accumulated in double.
template <typename T>
Vec affine(const std::vector<T>& w, const std::vector<T>& b, std::span<const double> x) {
    const std::size_t d = b.size();
    Vec out(d);
    for (std::size_t i = 0; i < d; ++i) {
        double acc = b[i];
        const T* row = w.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(row[j]) * x[j];
        out[i] = acc;
    }
    return out;
}

// out = W^T g
template <typename T>
Vec affine_transpose(const std::vector<T>& w, const Vec& g) {
    const std::size_t d = g.size();
    Vec out(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        const T* row = w.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) out[j] += static_cast<double>(row[j]) * g[i];
    }
    return out;
}

// dW += g x^T, db += g
void accumulate_outer(Vec& dw, Vec& db, const Vec& g, std::span<const double> x) {
    const std::size_t d = g.size();
    for (std::size_t i = 0; i < d; ++i) {
        db[i] += g[i];
        double* row = dw.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += g[i] * x[j];
    }
}

template <typename T>
std::vector<T> identity_matrix(std::size_t d) {
    std::vector<T> w(d * d, T(0));
    for (std::size_t i = 0; i < d; ++i) w[i * d + i] = T(1);
    return w;
}

void check_width(std::size_t got, std::size_t dim, const char* what) {
    if (got != dim) {
        throw ContractError(std::string(what) + " width " + std::to_string(got) +
                            " != head dim " + std::to_string(dim));
    }
}

void check_batch(const std::vector<Vec>& xs, const std::vector<Vec>& upstream, std::size_t dim) {
    if (xs.size() != upstream.size()) throw ContractError("backward: batch size mismatch");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        check_width(xs[i].size(), dim, "input");
        check_width(upstream[i].size(), dim, "upstream gradient");
    }
}

}  // namespace

double gelu(double t) { return 0.5 * t * (1.0 + std::erf(t * kInvSqrt2)); }

double gelu_grad(double t) {
    const double cdf = 0.5 * (1.0 + std::erf(t * kInvSqrt2));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * t * t);
    return cdf + t * pdf;
}

template <typename T>
BasicLinearHead<T> BasicLinearHead<T>::identity(std::size_t dim) {
    if (dim == 0) throw ContractError("head dim must be positive");
    return {dim, identity_matrix<T>(dim), std::vector<T>(dim, T(0))};
}

template <typename T>
BasicFfnHead<T> BasicFfnHead<T>::identity(std::size_t dim) {
    if (dim == 0) throw ContractError("head dim must be positive");
    BasicFfnHead h;
    h.dim = dim;
    for (int l = 0; l < 3; ++l) {
        h.weights[l] = identity_matrix<T>(dim);
        h.biases[l].assign(dim, T(0));
    }
    return h;
}

template <typename T>
std::vector<std::span<T>> parameters(BasicLinearHead<T>& h) {
    return {std::span<T>(h.weight), std::span<T>(h.bias)};
}

template <typename T>
std::vector<std::span<const T>> parameters(const BasicLinearHead<T>& h) {
    return {std::span<const T>(h.weight), std::span<const T>(h.bias)};
}

template <typename T>
std::vector<std::span<T>> parameters(BasicFfnHead<T>& h) {
    std::vector<std::span<T>> out;
    for (int l = 0; l < 3; ++l) {
        out.emplace_back(h.weights[l]);
        out.emplace_back(h.biases[l]);
    }
    return out;
}

template <typename T>
std::vector<std::span<const T>> parameters(const BasicFfnHead<T>& h) {
    std::vector<std::span<const T>> out;
    for (int l = 0; l < 3; ++l) {
        out.emplace_back(h.weights[l]);
        out.emplace_back(h.biases[l]);
    }
    return out;
}

template <typename T>
Vec forward(const BasicLinearHead<T>& h, std::span<const double> x) {
    check_width(x.size(), h.dim, "input");
    return affine(h.weight, h.bias, x);
}

template <typename T>
Vec forward(const BasicFfnHead<T>& h, std::span<const double> x) {
    check_width(x.size(), h.dim, "input");
    Vec a = affine(h.weights[0], h.biases[0], x);
    for (auto& v : a) v = gelu(v);
    Vec b = affine(h.weights[1], h.biases[1], a);
    for (auto& v : b) v = gelu(v);
    return affine(h.weights[2], h.biases[2], b);
}

template <typename T>
HeadGradients backward(const BasicLinearHead<T>& h, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream) {
    check_batch(xs, upstream, h.dim);
    const std::size_t d = h.dim;
    HeadGradients g;
    g.params = {Vec(d * d, 0.0), Vec(d, 0.0)};
    for (std::size_t n = 0; n < xs.size(); ++n) {
        accumulate_outer(g.params[0], g.params[1], upstream[n], xs[n]);
        g.inputs.push_back(affine_transpose(h.weight, upstream[n]));
    }
    return g;
}

template <typename T>
HeadGradients backward(const BasicFfnHead<T>& h, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream) {
    check_batch(xs, upstream, h.dim);
    const std::size_t d = h.dim;
    HeadGradients g;
    for (int l = 0; l < 3; ++l) {
        g.params.emplace_back(d * d, 0.0);
        g.params.emplace_back(d, 0.0);
    }
    for (std::size_t n = 0; n < xs.size(); ++n) {
        const Vec z1 = affine(h.weights[0], h.biases[0], xs[n]);
        Vec h1(d);
        for (std::size_t i = 0; i < d; ++i) h1[i] = gelu(z1[i]);
        const Vec z2 = affine(h.weights[1], h.biases[1], h1);
        Vec h2(d);
        for (std::size_t i = 0; i < d; ++i) h2[i] = gelu(z2[i]);

        const Vec& dy = upstream[n];
        accumulate_outer(g.params[4], g.params[5], dy, h2);
        Vec dz2 = affine_transpose(h.weights[2], dy);
        for (std::size_t i = 0; i < d; ++i) dz2[i] *= gelu_grad(z2[i]);
        accumulate_outer(g.params[2], g.params[3], dz2, h1);
        Vec dz1 = affine_transpose(h.weights[1], dz2);
        for (std::size_t i = 0; i < d; ++i) dz1[i] *= gelu_grad(z1[i]);
        accumulate_outer(g.params[0], g.params[1], dz1, xs[n]);
        g.inputs.push_back(affine_transpose(h.weights[0], dz1));
    }
    return g;
}

#define QADAPT_INSTANTIATE(T)                                                                    \
    template struct BasicLinearHead<T>;                                                          \
    template struct BasicFfnHead<T>;                                                             \
    template std::vector<std::span<T>> parameters(BasicLinearHead<T>&);                          \
    template std::vector<std::span<const T>> parameters(const BasicLinearHead<T>&);              \
    template std::vector<std::span<T>> parameters(BasicFfnHead<T>&);                             \
    template std::vector<std::span<const T>> parameters(const BasicFfnHead<T>&);                 \
    template Vec forward(const BasicLinearHead<T>&, std::span<const double>);                    \
    template Vec forward(const BasicFfnHead<T>&, std::span<const double>);                       \
    template HeadGradients backward(const BasicLinearHead<T>&, const std::vector<Vec>&,          \
                                    const std::vector<Vec>&);                                    \
    template HeadGradients backward(const BasicFfnHead<T>&, const std::vector<Vec>&,             \
                                    const std::vector<Vec>&);

QADAPT_INSTANTIATE(float)
QADAPT_INSTANTIATE(double)
#undef QADAPT_INSTANTIATE

Vec forward(const AdapterHead& head, std::span<const double> x) {
    return std::visit([&](const auto& h) { return forward(h, x); }, head);
}

HeadGradients backward(const AdapterHead& head, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream) {
    return std::visit([&](const auto& h) { return backward(h, xs, upstream); }, head);
}

std::size_t head_dim(const AdapterHead& head) {
    return std::visit([](const auto& h) { return h.dim; }, head);
}

std::string head_kind_name(const AdapterHead& head) {
    return std::holds_alternative<LinearHead>(head) ? "linear" : "ffn";
}

AdapterHead make_identity_head(const std::string& kind, std::size_t dim) {
    if (kind == "linear") return LinearHead::identity(dim);
    if (kind == "ffn") return FfnHead::identity(dim);
    throw ContractError("unknown head kind \"" + kind + "\" (expected linear or ffn)");
}

std::vector<std::span<float>> head_parameters(AdapterHead& head) {
    return std::visit([](auto& h) { return parameters(h); }, head);
}

std::vector<std::span<const float>> head_parameters(const AdapterHead& head) {
    return std::visit([](const auto& h) { return parameters(h); }, head);
}

EmbeddingMatrix transform_queries(const AdapterHead* head, const EmbeddingMatrix& queries) {
    if (head == nullptr) {
        EmbeddingMatrix out = queries;
        out.normalize();
        return out;
    }
    const std::size_t d = head_dim(*head);
    if (!queries.empty()) check_width(queries.dim(), d, "query embedding");
    std::vector<float> data;
    data.reserve(queries.count() * d);
    Vec x(d);
    for (std::size_t r = 0; r < queries.count(); ++r) {
        auto row = queries.row(r);
        for (std::size_t j = 0; j < d; ++j) x[j] = row[j];
        Vec y = forward(*head, x);
        double sq = 0.0;
        for (double v : y) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw NumericError("head output for query " + queries.id(r) + " has zero or non-finite norm");
        }
        for (double v : y) data.push_back(static_cast<float>(v / norm));
    }
    return EmbeddingMatrix(d, queries.ids(), std::move(data));
}

std::string encode_head(const AdapterHead& head) {
    std::string out = "HEAD";
    out.push_back(static_cast<char>(std::visit([](const auto& h) { return h.kind; }, head)));
    const auto dim = static_cast<std::uint32_t>(head_dim(head));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((dim >> (8 * i)) & 0xFF));
    for (auto tensor : head_parameters(head)) {
        for (float f : tensor) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
    return out;
}

AdapterHead decode_head(const std::string& bytes, const std::string& source) {
    if (bytes.size() < 9) throw FormatError(source + ": head header truncated");
    if (bytes.compare(0, 4, "HEAD") != 0) throw FormatError(source + ": bad head magic");
    const auto kind = static_cast<std::uint8_t>(bytes[4]);
    std::uint32_t dim = 0;
    for (int i = 3; i >= 0; --i) dim = (dim << 8) | static_cast<unsigned char>(bytes[5 + i]);
    if (dim == 0) throw FormatError(source + ": head dim is zero");
    AdapterHead head;
    if (kind == LinearHead::kind) {
        head = LinearHead::identity(dim);
    } else if (kind == FfnHead::kind) {
        head = FfnHead::identity(dim);
    } else {
        throw FormatError(source + ": unknown head kind byte " + std::to_string(kind));
    }
    std::size_t expected = 9;
    for (auto t : head_parameters(head)) expected += 4 * t.size();
    if (bytes.size() != expected) {
        throw FormatError(source + ": head payload length " + std::to_string(bytes.size()) +
                          " != expected " + std::to_string(expected));
    }
    std::size_t pos = 9;
    for (auto tensor : head_parameters(head)) {
        for (float& f : tensor) {
            std::uint32_t bits = 0;
            for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(bytes[pos + i]);
            std::memcpy(&f, &bits, 4);
            pos += 4;
        }
    }
    return head;
}

void save_head(const AdapterHead& head, const std::filesystem::path& path) {
    write_file_atomic(path, encode_head(head));
}

AdapterHead load_head(const std::filesystem::path& path) {
    return decode_head(read_file(path), path.string());
}

}  // namespace qadapt
