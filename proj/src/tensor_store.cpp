#include "lsaq/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "lsaq/error.hpp"

namespace lsaq {

static_assert(std::endian::native == std::endian::little, "little-endian hosts only");

namespace {

using json = nlohmann::json;

constexpr std::size_t kLengthPrefix = 8;
constexpr std::string_view kMetadataKey = "__metadata__";

std::uint64_t checked_u64(const json& value, const std::string& what) {
    if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
        throw Error(Errc::bad_header, what + " must be a non-negative integer");
    }
    return value.get<std::uint64_t>();
}

TensorEntry parse_entry(const std::string& name, const json& obj) {
    if (!obj.is_object()) throw Error(Errc::bad_header, "entry '" + name + "' is not an object");
    if (!obj.contains("dtype") || !obj["dtype"].is_string()) {
        throw Error(Errc::bad_header, "entry '" + name + "' lacks dtype");
    }
    if (!obj.contains("shape") || !obj["shape"].is_array()) {
        throw Error(Errc::bad_header, "entry '" + name + "' lacks shape");
    }
    if (!obj.contains("data_offsets") || !obj["data_offsets"].is_array() ||
        obj["data_offsets"].size() != 2) {
        throw Error(Errc::bad_header, "entry '" + name + "' lacks data_offsets");
    }
    TensorEntry entry;
    entry.name = name;
    entry.dtype = parse_dtype(obj["dtype"].get<std::string>());
    for (const auto& dim : obj["shape"]) entry.shape.push_back(checked_u64(dim, "shape dimension"));
    entry.begin = checked_u64(obj["data_offsets"][0], "data offset");
    entry.end = checked_u64(obj["data_offsets"][1], "data offset");
    if (entry.end < entry.begin) {
        throw Error(Errc::bad_header, "entry '" + name + "' has end < begin");
    }
    return entry;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::f32: return 4;
        case DType::f16: return 2;
        case DType::i8:
        case DType::u8: return 1;
    }
    return 0;
}

std::string_view dtype_name(DType dtype) {
    switch (dtype) {
        case DType::f32: return "F32";
        case DType::f16: return "F16";
        case DType::i8: return "I8";
        case DType::u8: return "U8";
    }
    return "?";
}

DType parse_dtype(std::string_view name) {
    if (name == "F32") return DType::f32;
    if (name == "F16") return DType::f16;
    if (name == "I8") return DType::i8;
    if (name == "U8") return DType::u8;
    throw Error(Errc::bad_header, "unsupported dtype '" + std::string(name) + "'");
}

std::uint64_t element_count(const Shape& shape) {
    std::uint64_t n = 1;
    for (auto dim : shape) n *= dim;
    return n;
}

Tensor Tensor::from_f32(Shape shape, std::span<const float> values) {
    Tensor t;
    t.dtype = DType::f32;
    t.shape = std::move(shape);
    t.bytes.resize(values.size_bytes());
    if (!values.empty()) std::memcpy(t.bytes.data(), values.data(), values.size_bytes());
    return t;
}

Tensor Tensor::from_i8(Shape shape, std::span<const std::int8_t> values) {
    Tensor t;
    t.dtype = DType::i8;
    t.shape = std::move(shape);
    t.bytes.resize(values.size());
    if (!values.empty()) std::memcpy(t.bytes.data(), values.data(), values.size());
    return t;
}

Tensor Tensor::from_u8(Shape shape, std::vector<std::uint8_t> values) {
    Tensor t;
    t.dtype = DType::u8;
    t.shape = std::move(shape);
    t.bytes = std::move(values);
    return t;
}

std::vector<float> Tensor::to_f32() const {
    const std::size_t n = bytes.size() / dtype_size(dtype);
    std::vector<float> out(n);
    switch (dtype) {
        case DType::f32:
            if (n) std::memcpy(out.data(), bytes.data(), n * 4);
            break;
        case DType::f16:
            for (std::size_t i = 0; i < n; ++i) {
                std::uint16_t raw;
                std::memcpy(&raw, bytes.data() + 2 * i, 2);
                out[i] = static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(raw));
            }
            break;
        case DType::i8:
            for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::int8_t>(bytes[i]);
            break;
        case DType::u8:
            for (std::size_t i = 0; i < n; ++i) out[i] = bytes[i];
            break;
    }
    return out;
}

std::vector<std::int8_t> Tensor::to_i8() const {
    if (dtype != DType::i8) throw Error(Errc::invalid_argument, "tensor is not I8");
    std::vector<std::int8_t> out(bytes.size());
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

void TensorStore::add(std::string name, Tensor tensor) {
    if (tensors_.count(name)) throw Error(Errc::duplicate_name, name);
    if (tensor.numel() * dtype_size(tensor.dtype) != tensor.bytes.size()) {
        throw Error(Errc::shape_mismatch, name + ": " + std::to_string(tensor.bytes.size()) +
                                              " bytes for " + std::to_string(tensor.numel()) +
                                              " elements of " + std::string(dtype_name(tensor.dtype)));
    }
    tensors_.emplace(std::move(name), std::move(tensor));
}

const Tensor& TensorStore::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw Error(Errc::missing_tensor, name);
    return it->second;
}

std::vector<TensorEntry> TensorStore::entries() const {
    std::vector<TensorEntry> out;
    out.reserve(tensors_.size());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : tensors_) {
        out.push_back({name, t.dtype, t.shape, offset, offset + t.bytes.size()});
        offset += t.bytes.size();
    }
    return out;
}

std::uint64_t TensorStore::payload_size() const {
    std::uint64_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.bytes.size();
    return n;
}

std::vector<std::uint8_t> write_store(const TensorStore& store) {
    json header = json::object();
    for (const auto& e : store.entries()) {
        header[e.name] = {{"dtype", dtype_name(e.dtype)},
                          {"shape", e.shape},
                          {"data_offsets", {e.begin, e.end}}};
    }
    if (!store.metadata().empty()) header[std::string(kMetadataKey)] = store.metadata();

    std::string text = header.dump();
    // Pad with spaces so the payload starts 8-byte aligned.
    text.append((kLengthPrefix - text.size() % kLengthPrefix) % kLengthPrefix, ' ');

    std::vector<std::uint8_t> out;
    out.reserve(kLengthPrefix + text.size() + store.payload_size());
    const std::uint64_t header_len = text.size();
    for (std::size_t i = 0; i < kLengthPrefix; ++i) out.push_back(static_cast<std::uint8_t>(header_len >> (8 * i)));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& [name, t] : store.tensors()) out.insert(out.end(), t.bytes.begin(), t.bytes.end());
    return out;
}

TensorStore read_store(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kLengthPrefix) throw Error(Errc::truncated, "missing header length");
    std::uint64_t header_len = 0;
    for (std::size_t i = 0; i < kLengthPrefix; ++i) header_len |= std::uint64_t{bytes[i]} << (8 * i);
    if (header_len > bytes.size() - kLengthPrefix) {
        throw Error(Errc::truncated, "header length " + std::to_string(header_len) + " exceeds file size");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + kLengthPrefix, bytes.begin() + kLengthPrefix + header_len);
    } catch (const json::exception& e) {
        throw Error(Errc::bad_header, e.what());
    }
    if (!header.is_object()) throw Error(Errc::bad_header, "header is not an object");

    const auto payload = bytes.subspan(kLengthPrefix + header_len);

    TensorStore store;
    std::vector<TensorEntry> entries;
    for (const auto& [key, value] : header.items()) {
        if (key == kMetadataKey) {
            if (!value.is_object()) throw Error(Errc::bad_header, "__metadata__ is not an object");
            for (const auto& [mk, mv] : value.items()) {
                if (!mv.is_string()) throw Error(Errc::bad_header, "metadata value for '" + mk + "' is not a string");
                store.metadata()[mk] = mv.get<std::string>();
            }
            continue;
        }
        entries.push_back(parse_entry(key, value));
    }

    std::sort(entries.begin(), entries.end(), [](const TensorEntry& a, const TensorEntry& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::uint64_t cursor = 0;
    for (const auto& e : entries) {
        if (e.end > payload.size()) {
            throw Error(Errc::out_of_bounds, e.name + " ends at " + std::to_string(e.end) + " of " +
                                                 std::to_string(payload.size()));
        }
        if (e.begin < cursor) throw Error(Errc::overlapping, e.name);
        if (e.begin > cursor) throw Error(Errc::bad_header, "gap before " + e.name);
        if (element_count(e.shape) * dtype_size(e.dtype) != e.end - e.begin) {
            throw Error(Errc::shape_mismatch, e.name);
        }
        cursor = e.end;
    }
    if (cursor != payload.size()) throw Error(Errc::bad_header, "trailing bytes after last tensor");

    for (auto& e : entries) {
        Tensor t;
        t.dtype = e.dtype;
        t.shape = std::move(e.shape);
        t.bytes.assign(payload.begin() + e.begin, payload.begin() + e.end);
        store.add(std::move(e.name), std::move(t));
    }
    return store;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, "short write to " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

void save_store(const std::filesystem::path& path, const TensorStore& store) {
    write_file(path, write_store(store));
}

TensorStore load_store(const std::filesystem::path& path) { return read_store(read_file(path)); }

}  // namespace lsaq
