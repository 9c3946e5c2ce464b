#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsaq/planner.hpp"
#include "lsaq/tensor_store.hpp"

namespace lsaq {

// Largest representable magnitude of the symmetric range, 2^(bits-1) - 1.
int symmetric_max(unsigned bits);

struct QuantizedRow {
    std::vector<std::int8_t> q;
    float scale = 1.0f;
};

// Per-row symmetric quantization with scale max|row| / (2^(bits-1) - 1) and
// round-half-to-even. A zero row gets scale 1 and all-zero codes.
QuantizedRow quantize_row(std::span<const float> row, unsigned bits);

// Codes are stored unpacked here; packing happens when writing a store.
struct QuantizedTensor {
    unsigned bits = 8;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::int8_t> q;  // rows x cols, row-major
    std::vector<float> scales;   // one per row

    bool operator==(const QuantizedTensor&) const = default;
};

QuantizedTensor quantize_tensor(std::span<const float> weights, std::size_t rows, std::size_t cols, unsigned bits);
std::vector<float> dequantize(const QuantizedTensor& t);

// Element 2m in the low nibble of byte m, 2m+1 in the high nibble; each value
// is stored as v + 8. Odd lengths pad the last high nibble with an encoded 0.
std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> values);
std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count);

inline constexpr const char* kQweightSuffix = ".qweight";
inline constexpr const char* kScalesSuffix = ".scales";
inline constexpr const char* kPackingKey = "packing";
inline constexpr const char* kPackingInt4 = "int4-lo-first";
inline constexpr const char* kPlanIdKey = "plan_id";

// Maps tensor names to layer indices: "<prefix><i>.<rest>".
struct LayerNameRule {
    std::vector<std::string> prefixes;

    std::optional<std::size_t> layer_of(std::string_view name) const;

    // "layers.{i}." and "model.layers.{i}."
    static LayerNameRule defaults();
};

// Quantizes every 2-D tensor of each non-FP16 layer at that layer's bit width
// and writes "<name>.qweight" / "<name>.scales" in its place. FP16 layers,
// 1-D layer tensors and non-layer tensors are copied through unchanged.
TensorStore apply_plan(const TensorStore& weights, const QuantPlan& plan,
                       const LayerNameRule& rule = LayerNameRule::defaults());

// Reads "<base>.qweight" + "<base>.scales" back into a QuantizedTensor.
QuantizedTensor load_quantized(const TensorStore& store, const std::string& base);

// Replaces every quantized pair with an F32 tensor under its base name.
TensorStore dequantize_store(const TensorStore& store);

}  // namespace lsaq
