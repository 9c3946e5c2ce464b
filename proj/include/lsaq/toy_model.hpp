#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lsaq/bundle.hpp"
#include "lsaq/planner.hpp"
#include "lsaq/tensor_store.hpp"

namespace lsaq::toy {

struct ToyConfig {
    std::size_t vocab = 256;
    std::size_t d_model = 32;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t ffn_mult = 4;
    std::size_t max_seq = 64;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    std::size_t ffn_dim() const { return ffn_mult * d_model; }
    void validate() const;
    bool operator==(const ToyConfig&) const = default;
};

// All matrices are (out x in), row-major, applied as y = W x.
struct ToyLayer {
    std::vector<float> wq, wk, wv, wo;  // d x d
    std::vector<float> w1;              // ffn x d
    std::vector<float> w2;              // d x ffn
    std::vector<float> norm1, norm2;    // d
};

struct ToyWeights {
    ToyConfig config;
    std::vector<float> embed;  // V x d; also the tied output head
    std::vector<float> pos;    // max_seq x d
    std::vector<ToyLayer> layers;
    std::vector<float> final_norm;  // d
};

// Matrices and embeddings are drawn uniformly with standard deviation
// 0.02 / sqrt(d) from SplitMix64(seed); norm gains start at 1.
ToyWeights init_toy(const ToyConfig& config);

std::uint64_t parameter_count(const ToyConfig& config);

// Zeros every per-layer tensor (attention, MLP and norm gains).
void zero_layers(ToyWeights& weights);

TensorStore weights_to_store(const ToyWeights& weights);
ToyWeights weights_from_store(const TensorStore& store);

// Rebuilds weights from a store written by apply_plan, dequantizing quantized
// entries. Throws missing_scales when a ".qweight" has no ".scales".
ToyWeights load_dequantized(const TensorStore& store);

struct Capture {
    std::vector<float> logits;                // next-token logits at the last position, length V
    std::vector<std::vector<float>> x_in;     // per layer, residual entering the layer
    std::vector<std::vector<float>> x_out;    // per layer, residual leaving the layer
};

// Attention probabilities per layer and head, each seq x seq row-major.
struct AttentionTrace {
    std::vector<std::vector<std::vector<float>>> probs;
};

Capture forward_capture(const ToyWeights& weights, std::span<const std::uint32_t> tokens,
                        AttentionTrace* trace = nullptr);

// Logits for every position, seq x V row-major.
std::vector<float> forward_logits(const ToyWeights& weights, std::span<const std::uint32_t> tokens);

// exp(mean next-token NLL). The corpus is cut into windows of max_seq tokens
// that overlap by one token, so every transition is scored exactly once.
double perplexity(const ToyWeights& weights, std::span<const std::uint32_t> corpus);

// Zipf-like token stream (P(v) ∝ 1 / (v + 1)) drawn from SplitMix64(seed).
std::vector<std::uint32_t> zipf_tokens(std::size_t vocab, std::size_t length, std::uint64_t seed);

inline constexpr std::uint64_t kCorpusSeed = 20240101;
inline constexpr std::size_t kCorpusLength = 2048;
inline constexpr std::size_t kPromptLength = 16;

std::vector<std::uint32_t> default_corpus(const ToyConfig& config, std::uint64_t seed = kCorpusSeed);

// Prompt s of a calibration run.
std::vector<std::uint32_t> calibration_prompt(const ToyConfig& config, std::uint64_t seed, std::size_t sample);

// Runs forward_capture over `samples` seeded prompts.
CalibrationBundle capture_bundle(const ToyWeights& weights, std::size_t samples);

// Byte-cost profile of the toy model for the planner.
ModelProfile toy_profile(const ToyConfig& config);

}  // namespace lsaq::toy
