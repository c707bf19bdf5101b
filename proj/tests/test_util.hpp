#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "qadapt/embedding_store.hpp"

namespace qadapt::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("qadapt_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline EmbeddingMatrix random_unit_matrix(std::size_t count, std::size_t dim,
                                          std::uint64_t seed, const std::string& prefix = "d") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    std::vector<std::string> ids;
    std::vector<float> data(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
        ids.push_back(prefix + std::to_string(i));
        for (std::size_t j = 0; j < dim; ++j) data[i * dim + j] = dist(rng);
    }
    EmbeddingMatrix m(dim, std::move(ids), std::move(data));
    m.normalize();
    return m;
}

}  // namespace qadapt::testing
