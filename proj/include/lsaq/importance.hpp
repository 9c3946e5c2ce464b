#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsaq/bundle.hpp"

namespace lsaq {

enum class Metric { jaccard, cosine };

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view name);

inline constexpr std::size_t kDefaultTopK = 10;

// Row-major read-only matrix.
struct MatrixView {
    std::span<const float> data;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::span<const float> row(std::size_t r) const { return data.subspan(r * cols, cols); }
};

// Vocabulary indices, kept sorted ascending so set algebra is a linear merge.
struct TokenSet {
    std::vector<std::size_t> indices;

    std::size_t size() const { return indices.size(); }
    bool operator==(const TokenSet&) const = default;
};

// logits[v] = <h, embedding row v>.
std::vector<float> project_to_vocab(std::span<const float> hidden, MatrixView embedding);

// Indices of the k largest logits; equal logits prefer the lower index.
TokenSet topk_indices(std::span<const float> logits, std::size_t k);

// 1 - |a ∩ b| / |a ∪ b|.
float jaccard_importance(const TokenSet& a, const TokenSet& b);

// 1 - cos(x_in, x_out), in [0, 2].
float cosine_importance(std::span<const float> x_in, std::span<const float> x_out);

struct LayerScore {
    std::size_t layer = 0;
    float score = 0.0f;
};

struct ImportanceReport {
    Metric metric = Metric::jaccard;
    std::size_t k = kDefaultTopK;  // meaningful for jaccard only
    std::vector<LayerScore> per_layer;
    std::vector<std::size_t> ordering;  // ascending importance
};

// Per-sample scores averaged over samples; ordering ascending with ties broken
// by lower layer index. Work is spread over `threads` workers (0 = hardware).
ImportanceReport score_layers(const CalibrationBundle& bundle, Metric metric, std::size_t k,
                              unsigned threads = 0);

std::vector<std::size_t> rank_ascending(const ImportanceReport& report);

// Ordering recomputed from per_layer scores.
std::vector<std::size_t> ascending_order(std::span<const LayerScore> scores);

std::string report_to_json(const ImportanceReport& report);
ImportanceReport report_from_json(std::string_view text);
std::string report_to_csv(const ImportanceReport& report);

}  // namespace lsaq
