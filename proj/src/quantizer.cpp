#include "lsaq/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "lsaq/error.hpp"

namespace lsaq {

namespace {

void check_bits(unsigned bits) {
    if (bits != 8 && bits != 4) throw Error(Errc::invalid_argument, "bits must be 8 or 4");
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

// A scale s such that fl(fl(qmax * s) / qmax) == s: re-quantizing the
// dequantized row maximum then recovers s exactly. The naive quotient fails
// this for a small fraction of INT8 rows; an adjacent float always passes.
float stable_scale(float max_abs, int qmax) {
    const float qm = static_cast<float>(qmax);
    const float base = max_abs / qm;
    if (base == 0.0f) return std::numeric_limits<float>::denorm_min();
    auto stable = [qm](float s) { return (s * qm) / qm == s; };
    if (stable(base)) return base;
    float up = base;
    float down = base;
    for (int step = 0; step < 4; ++step) {
        up = std::nextafter(up, std::numeric_limits<float>::infinity());
        if (stable(up)) return up;
        down = std::nextafter(down, 0.0f);
        if (down > 0.0f && stable(down)) return down;
    }
    return base;
}

std::string int4_cols_key(const std::string& qweight_name) { return "int4_cols." + qweight_name; }

}  // namespace

int symmetric_max(unsigned bits) {
    check_bits(bits);
    return (1 << (bits - 1)) - 1;
}

QuantizedRow quantize_row(std::span<const float> row, unsigned bits) {
    const int qmax = symmetric_max(bits);
    if (row.empty()) throw Error(Errc::invalid_argument, "empty row");

    float max_abs = 0.0f;
    for (float w : row) {
        if (!std::isfinite(w)) throw Error(Errc::invalid_argument, "non-finite weight");
        max_abs = std::max(max_abs, std::fabs(w));
    }

    QuantizedRow out;
    out.q.assign(row.size(), 0);
    if (max_abs == 0.0f) {
        out.scale = 1.0f;
        return out;
    }
    out.scale = stable_scale(max_abs, qmax);
    // w * qmax / max|w| in double: exact product, so ties land exactly on .5.
    for (std::size_t j = 0; j < row.size(); ++j) {
        const double code = std::nearbyint(static_cast<double>(row[j]) * static_cast<double>(qmax) /
                                           static_cast<double>(max_abs));
        out.q[j] = static_cast<std::int8_t>(std::clamp(code, -double(qmax), double(qmax)));
    }
    return out;
}

QuantizedTensor quantize_tensor(std::span<const float> weights, std::size_t rows, std::size_t cols, unsigned bits) {
    check_bits(bits);
    if (rows == 0 || cols == 0) throw Error(Errc::invalid_argument, "empty matrix");
    if (weights.size() != rows * cols) throw Error(Errc::shape_mismatch, "matrix data does not match rows x cols");
    QuantizedTensor t;
    t.bits = bits;
    t.rows = rows;
    t.cols = cols;
    t.q.reserve(rows * cols);
    t.scales.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        auto r = quantize_row(weights.subspan(i * cols, cols), bits);
        t.q.insert(t.q.end(), r.q.begin(), r.q.end());
        t.scales.push_back(r.scale);
    }
    return t;
}

std::vector<float> dequantize(const QuantizedTensor& t) {
    std::vector<float> out(t.rows * t.cols);
    for (std::size_t i = 0; i < t.rows; ++i) {
        for (std::size_t j = 0; j < t.cols; ++j) {
            out[i * t.cols + j] = static_cast<float>(t.q[i * t.cols + j]) * t.scales[i];
        }
    }
    return out;
}

std::vector<std::uint8_t> pack_int4(std::span<const std::int8_t> values) {
    std::vector<std::uint8_t> out((values.size() + 1) / 2, 0x88);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int v = values[i];
        if (v < -7 || v > 7) throw Error(Errc::invalid_argument, "INT4 value " + std::to_string(v) + " out of range");
        const auto nibble = static_cast<std::uint8_t>(v + 8);
        auto& byte = out[i / 2];
        byte = (i % 2 == 0) ? static_cast<std::uint8_t>((byte & 0xF0) | nibble)
                            : static_cast<std::uint8_t>((byte & 0x0F) | (nibble << 4));
    }
    return out;
}

std::vector<std::int8_t> unpack_int4(std::span<const std::uint8_t> bytes, std::size_t count) {
    if (bytes.size() < (count + 1) / 2) throw Error(Errc::shape_mismatch, "packed INT4 buffer too short");
    std::vector<std::int8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint8_t byte = bytes[i / 2];
        const int nibble = (i % 2 == 0) ? (byte & 0x0F) : (byte >> 4);
        if (nibble == 0) throw Error(Errc::invalid_argument, "INT4 code -8 is outside the symmetric range");
        out[i] = static_cast<std::int8_t>(nibble - 8);
    }
    return out;
}

std::optional<std::size_t> LayerNameRule::layer_of(std::string_view name) const {
    for (const auto& prefix : prefixes) {
        if (name.substr(0, prefix.size()) != prefix) continue;
        std::string_view rest = name.substr(prefix.size());
        std::size_t digits = 0;
        while (digits < rest.size() && rest[digits] >= '0' && rest[digits] <= '9') ++digits;
        if (digits == 0 || digits >= rest.size() || rest[digits] != '.') continue;
        return std::stoull(std::string(rest.substr(0, digits)));
    }
    return std::nullopt;
}

LayerNameRule LayerNameRule::defaults() { return LayerNameRule{{"layers.", "model.layers."}}; }

TensorStore apply_plan(const TensorStore& weights, const QuantPlan& plan, const LayerNameRule& rule) {
    const std::size_t layers = plan.assignment.size();

    std::set<std::size_t> layers_with_matrix;
    std::size_t store_layers = 0;
    for (const auto& [name, t] : weights.tensors()) {
        if (auto layer = rule.layer_of(name)) {
            store_layers = std::max(store_layers, *layer + 1);
            if (t.shape.size() == 2) layers_with_matrix.insert(*layer);
        }
    }
    for (std::size_t layer = 0; layer < layers; ++layer) {
        if (!layers_with_matrix.count(layer)) {
            throw Error(Errc::unmatched_layer, "plan layer " + std::to_string(layer) + " has no 2-D tensor in the store");
        }
    }
    if (store_layers != layers) {
        throw Error(Errc::unmatched_layer, "store has " + std::to_string(store_layers) + " layers, plan has " +
                                               std::to_string(layers));
    }

    TensorStore out;
    out.metadata() = weights.metadata();
    out.metadata()[kPlanIdKey] = plan_id(plan);
    bool packed = false;

    for (const auto& [name, t] : weights.tensors()) {
        const auto layer = rule.layer_of(name);
        if (!layer || plan.assignment[*layer] == Precision::fp16 || t.shape.size() == 1) {
            out.add(name, t);
            continue;
        }
        if (t.shape.size() != 2) {
            throw Error(Errc::not_matrix, name + " has rank " + std::to_string(t.shape.size()));
        }
        if (t.dtype != DType::f32 && t.dtype != DType::f16) {
            throw Error(Errc::invalid_argument, name + " is not a floating-point tensor");
        }
        const unsigned bits = bits_of(plan.assignment[*layer]);
        const auto rows = static_cast<std::size_t>(t.shape[0]);
        const auto cols = static_cast<std::size_t>(t.shape[1]);
        const auto values = t.to_f32();
        const auto qt = quantize_tensor(values, rows, cols, bits);

        const std::string qname = name + kQweightSuffix;
        if (bits == 8) {
            out.add(qname, Tensor::from_i8({rows, cols}, qt.q));
        } else {
            std::vector<std::uint8_t> bytes;
            bytes.reserve(rows * ((cols + 1) / 2));
            for (std::size_t i = 0; i < rows; ++i) {
                auto row = pack_int4(std::span<const std::int8_t>(qt.q).subspan(i * cols, cols));
                bytes.insert(bytes.end(), row.begin(), row.end());
            }
            out.add(qname, Tensor::from_u8({rows, (cols + 1) / 2}, std::move(bytes)));
            out.metadata()[int4_cols_key(qname)] = std::to_string(cols);
            packed = true;
        }
        out.add(name + kScalesSuffix, Tensor::from_f32({rows}, qt.scales));
    }
    if (packed) out.metadata()[kPackingKey] = kPackingInt4;
    return out;
}

QuantizedTensor load_quantized(const TensorStore& store, const std::string& base) {
    const std::string qname = base + kQweightSuffix;
    const std::string sname = base + kScalesSuffix;
    const Tensor& qw = store.at(qname);
    if (!store.contains(sname)) throw Error(Errc::missing_scales, sname);
    const Tensor& sc = store.at(sname);
    if (qw.shape.size() != 2) throw Error(Errc::not_matrix, qname);

    QuantizedTensor t;
    t.rows = static_cast<std::size_t>(qw.shape[0]);
    if (sc.dtype != DType::f32 || sc.shape != Shape{t.rows}) {
        throw Error(Errc::shape_mismatch, sname + " must be F32 with one value per row");
    }
    t.scales = sc.to_f32();

    if (qw.dtype == DType::i8) {
        t.bits = 8;
        t.cols = static_cast<std::size_t>(qw.shape[1]);
        t.q = qw.to_i8();
    } else if (qw.dtype == DType::u8) {
        t.bits = 4;
        const auto packing = store.metadata().find(kPackingKey);
        if (packing == store.metadata().end() || packing->second != kPackingInt4) {
            throw Error(Errc::bad_header, "U8 qweight without int4 packing metadata");
        }
        const auto cols_it = store.metadata().find(int4_cols_key(qname));
        t.cols = cols_it != store.metadata().end() ? std::stoull(cols_it->second)
                                                   : static_cast<std::size_t>(2 * qw.shape[1]);
        const std::size_t row_bytes = static_cast<std::size_t>(qw.shape[1]);
        if ((t.cols + 1) / 2 != row_bytes) throw Error(Errc::shape_mismatch, qname + " column count");
        t.q.reserve(t.rows * t.cols);
        for (std::size_t i = 0; i < t.rows; ++i) {
            auto row = unpack_int4(std::span<const std::uint8_t>(qw.bytes).subspan(i * row_bytes, row_bytes), t.cols);
            t.q.insert(t.q.end(), row.begin(), row.end());
        }
    } else {
        throw Error(Errc::invalid_argument, qname + " must be I8 or U8");
    }
    return t;
}

TensorStore dequantize_store(const TensorStore& store) {
    TensorStore out;
    for (const auto& [key, value] : store.metadata()) {
        if (key.rfind("int4_cols.", 0) == 0 || key == kPackingKey) continue;
        out.metadata()[key] = value;
    }
    for (const auto& [name, t] : store.tensors()) {
        if (ends_with(name, kQweightSuffix)) {
            const std::string base = name.substr(0, name.size() - std::string_view(kQweightSuffix).size());
            const auto qt = load_quantized(store, base);
            out.add(base, Tensor::from_f32({qt.rows, qt.cols}, dequantize(qt)));
        } else if (ends_with(name, kScalesSuffix)) {
            const std::string base = name.substr(0, name.size() - std::string_view(kScalesSuffix).size());
            if (!store.contains(base + kQweightSuffix)) out.add(name, t);
        } else {
            out.add(name, t);
        }
    }
    return out;
}

}  // namespace lsaq
