#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lsaq {

enum class Precision { fp16, int8, int4 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);
unsigned bits_of(Precision p);

// Byte-cost model of a decoder stack. Every repeated layer costs the same;
// everything outside the layers is kept at FP16.
struct ModelProfile {
    std::string model_id;
    std::size_t num_layers = 0;
    std::uint64_t layer_param_count = 0;
    std::uint64_t fixed_param_count = 0;
    std::uint64_t scale_rows_per_layer = 0;
    std::uint64_t bytes_per_scale = 4;
    std::uint64_t headroom_bytes = 0;
    std::string notes;

    void validate() const;
};

ModelProfile profile_from_json(std::string_view text);
std::string profile_to_json(const ModelProfile& profile);

using PrecisionAssignment = std::vector<Precision>;

std::uint64_t layer_bytes(const ModelProfile& profile, Precision precision);

// Layers + FP16 fixed parameters + headroom.
std::uint64_t estimate_total(const ModelProfile& profile, std::span<const Precision> assignment);

// Uniform assignment helper: estimate_total of L copies of `precision`.
std::uint64_t estimate_uniform(const ModelProfile& profile, Precision precision);

double average_bits(std::span<const Precision> assignment);

struct PrecisionCounts {
    std::size_t fp16 = 0;
    std::size_t int8 = 0;
    std::size_t int4 = 0;

    bool operator==(const PrecisionCounts&) const = default;
};

PrecisionCounts count_precisions(std::span<const Precision> assignment);

struct QuantPlan {
    std::string model_id;
    PrecisionAssignment assignment;  // indexed by layer
    std::vector<std::size_t> ordering_used;
    std::uint64_t predicted_bytes = 0;
    std::uint64_t budget_bytes = 0;
    double average_bits = 0.0;

    PrecisionCounts counts() const { return count_precisions(assignment); }
};

// Precision allocation:
//   budget >= all-FP16            -> all FP16
//   budget >= all-INT8            -> all INT8
//   budget >= all-INT4            -> the least important n_int4 layers INT4, rest INT8,
//                                    n_int4 = L - floor((budget - all-INT4) / (INT8 - INT4 layer bytes))
//   otherwise                     -> Error(Errc::insufficient_memory)
// `ranked` lists layers least important first and must be a permutation of [0, L).
QuantPlan allocate_precision(std::span<const std::size_t> ranked, const ModelProfile& profile,
                             std::uint64_t budget_bytes);

std::string plan_to_json(const QuantPlan& plan);
QuantPlan plan_from_json(std::string_view text);

// Stable identifier of a plan: FNV-1a 64 over its canonical JSON, as 16 hex digits.
std::string plan_id(const QuantPlan& plan);

// Table-style rendering (memory, FP16/INT8/INT4 layer counts, average bits).
std::string format_strategy_table(std::span<const QuantPlan> plans);

}  // namespace lsaq
