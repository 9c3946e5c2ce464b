#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lsaq {

enum class DType { f32, f16, i8, u8 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);  // "F32", "F16", "I8", "U8"
DType parse_dtype(std::string_view name);  // throws Errc::bad_header

using Shape = std::vector<std::uint64_t>;

// Product of dimensions; the empty shape is a scalar with one element.
std::uint64_t element_count(const Shape& shape);

// An owned tensor payload. Bytes are little-endian in container order.
struct Tensor {
    DType dtype = DType::f32;
    Shape shape;
    std::vector<std::uint8_t> bytes;

    static Tensor from_f32(Shape shape, std::span<const float> values);
    static Tensor from_i8(Shape shape, std::span<const std::int8_t> values);
    static Tensor from_u8(Shape shape, std::vector<std::uint8_t> values);

    std::uint64_t numel() const { return element_count(shape); }

    // Numeric view as f32. F16 is widened; I8/U8 are converted value-wise.
    std::vector<float> to_f32() const;
    std::vector<std::int8_t> to_i8() const;

    bool operator==(const Tensor&) const = default;
};

struct TensorEntry {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

// In-memory image of a single-file tensor container: an 8-byte little-endian
// header length, a JSON header, then the raw payload.
class TensorStore {
public:
    // Throws duplicate_name, or shape_mismatch when the byte length does not
    // match shape x dtype.
    void add(std::string name, Tensor tensor);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const Tensor& at(const std::string& name) const;  // throws missing_tensor

    const std::map<std::string, Tensor>& tensors() const { return tensors_; }
    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    // Entries as they are laid out by write_store (lexicographic, contiguous).
    std::vector<TensorEntry> entries() const;
    std::uint64_t payload_size() const;

    bool operator==(const TensorStore&) const = default;

private:
    std::map<std::string, Tensor> tensors_;
    std::map<std::string, std::string> metadata_;
};

std::vector<std::uint8_t> write_store(const TensorStore& store);
TensorStore read_store(std::span<const std::uint8_t> bytes);

void save_store(const std::filesystem::path& path, const TensorStore& store);
TensorStore load_store(const std::filesystem::path& path);

// Shared by the CLI for plan/report files.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace lsaq
