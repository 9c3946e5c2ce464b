#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lsaq/tensor_store.hpp"

namespace lsaq {

// Last-token residual-stream captures for every layer and calibration sample,
// plus the embedding matrix used for vocabulary projection.
struct CalibrationBundle {
    std::size_t num_layers = 0;
    std::size_t num_samples = 0;
    std::size_t dim = 0;
    std::size_t vocab = 0;
    // x_in[layer][sample] and x_out[layer][sample], each of length dim.
    std::vector<std::vector<std::vector<float>>> x_in;
    std::vector<std::vector<std::vector<float>>> x_out;
    std::vector<float> embedding;  // vocab x dim, row-major
    std::map<std::string, std::string> metadata;

    std::span<const float> embedding_row(std::size_t v) const {
        return std::span<const float>(embedding).subspan(v * dim, dim);
    }
};

std::string bundle_input_name(std::size_t layer, std::size_t sample);
std::string bundle_output_name(std::size_t layer, std::size_t sample);
inline constexpr const char* kEmbeddingName = "embed.W_E";

// Validates the activation naming convention and dimensions.
CalibrationBundle load_bundle(const TensorStore& store);

TensorStore bundle_to_store(const CalibrationBundle& bundle);

}  // namespace lsaq
