#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qadapt/embedding_store.hpp"

namespace qadapt {

using Vec = std::vector<double>;

/// Exact GELU, t * Phi(t).
double gelu(double t);
/// Phi(t) + t * phi(t).
double gelu_grad(double t);

/// y = W x + b with W stored row-major (W[i * dim + j] maps x_j to y_i).
template <typename T>
struct BasicLinearHead {
    using value_type = T;
    static constexpr std::uint8_t kind = 1;

    std::size_t dim = 0;
    std::vector<T> weight;
    std::vector<T> bias;

    static BasicLinearHead identity(std::size_t dim);

    friend bool operator==(const BasicLinearHead&, const BasicLinearHead&) = default;
};

/// y = W3 g(W2 g(W1 x + b1) + b2) + b3, all layers dim x dim, no residual.
template <typename T>
struct BasicFfnHead {
    using value_type = T;
    static constexpr std::uint8_t kind = 2;

    std::size_t dim = 0;
    std::array<std::vector<T>, 3> weights;
    std::array<std::vector<T>, 3> biases;

    static BasicFfnHead identity(std::size_t dim);

    friend bool operator==(const BasicFfnHead&, const BasicFfnHead&) = default;
};

using LinearHead = BasicLinearHead<float>;
using FfnHead = BasicFfnHead<float>;
using AdapterHead = std::variant<LinearHead, FfnHead>;

/// Parameter tensors in checkpoint order: linear (W, b); FFN (W1, b1, W2,
/// b2, W3, b3).
template <typename T>
std::vector<std::span<T>> parameters(BasicLinearHead<T>& head);
template <typename T>
std::vector<std::span<const T>> parameters(const BasicLinearHead<T>& head);
template <typename T>
std::vector<std::span<T>> parameters(BasicFfnHead<T>& head);
template <typename T>
std::vector<std::span<const T>> parameters(const BasicFfnHead<T>& head);

/// Gradients summed over the batch, one tensor per entry of `parameters`,
/// plus the gradient with respect to each input.
struct HeadGradients {
    std::vector<Vec> params;
    std::vector<Vec> inputs;
};

// Instantiated for float and double parameter storage.
template <typename T>
Vec forward(const BasicLinearHead<T>& head, std::span<const double> x);
template <typename T>
Vec forward(const BasicFfnHead<T>& head, std::span<const double> x);

template <typename T>
HeadGradients backward(const BasicLinearHead<T>& head, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream);
template <typename T>
HeadGradients backward(const BasicFfnHead<T>& head, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream);

Vec forward(const AdapterHead& head, std::span<const double> x);
HeadGradients backward(const AdapterHead& head, const std::vector<Vec>& xs,
                       const std::vector<Vec>& upstream);

std::size_t head_dim(const AdapterHead& head);
std::string head_kind_name(const AdapterHead& head);

/// "linear" or "ffn" at identity initialization.
AdapterHead make_identity_head(const std::string& kind, std::size_t dim);

std::vector<std::span<float>> head_parameters(AdapterHead& head);
std::vector<std::span<const float>> head_parameters(const AdapterHead& head);

/// Runs every row through the head (or copies it when `head` is null) and
/// re-normalizes the result to unit length.
EmbeddingMatrix transform_queries(const AdapterHead* head, const EmbeddingMatrix& queries);

/// "HEAD", kind byte, dim (u32 LE), then each parameter tensor as f32 LE.
std::string encode_head(const AdapterHead& head);
AdapterHead decode_head(const std::string& bytes, const std::string& source = "<head>");
void save_head(const AdapterHead& head, const std::filesystem::path& path);
AdapterHead load_head(const std::filesystem::path& path);

}  // namespace qadapt
