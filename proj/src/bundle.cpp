#include "lsaq/bundle.hpp"

#include <charconv>
#include <optional>
#include <string_view>

#include "lsaq/error.hpp"

namespace lsaq {

namespace {

struct CaptureKey {
    std::size_t layer;
    bool input;
    std::size_t sample;
};

std::optional<std::size_t> parse_index(std::string_view& text) {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr == text.data()) return std::nullopt;
    text.remove_prefix(static_cast<std::size_t>(ptr - text.data()));
    return value;
}

bool consume(std::string_view& text, std::string_view prefix) {
    if (text.substr(0, prefix.size()) != prefix) return false;
    text.remove_prefix(prefix.size());
    return true;
}

// "layer.{i}.in.sample.{s}" / "layer.{i}.out.sample.{s}"
std::optional<CaptureKey> parse_capture_name(std::string_view name) {
    CaptureKey key{};
    if (!consume(name, "layer.")) return std::nullopt;
    auto layer = parse_index(name);
    if (!layer) return std::nullopt;
    key.layer = *layer;
    if (consume(name, ".in.sample.")) {
        key.input = true;
    } else if (consume(name, ".out.sample.")) {
        key.input = false;
    } else {
        return std::nullopt;
    }
    auto sample = parse_index(name);
    if (!sample || !name.empty()) return std::nullopt;
    key.sample = *sample;
    return key;
}

}  // namespace

std::string bundle_input_name(std::size_t layer, std::size_t sample) {
    return "layer." + std::to_string(layer) + ".in.sample." + std::to_string(sample);
}

std::string bundle_output_name(std::size_t layer, std::size_t sample) {
    return "layer." + std::to_string(layer) + ".out.sample." + std::to_string(sample);
}

CalibrationBundle load_bundle(const TensorStore& store) {
    if (!store.contains(kEmbeddingName)) throw Error(Errc::missing_tensor, kEmbeddingName);
    const Tensor& embed = store.at(kEmbeddingName);
    if (embed.dtype != DType::f32 || embed.shape.size() != 2) {
        throw Error(Errc::dimension_mismatch, std::string(kEmbeddingName) + " must be a 2-D F32 matrix");
    }

    CalibrationBundle bundle;
    bundle.vocab = embed.shape[0];
    bundle.dim = embed.shape[1];
    bundle.embedding = embed.to_f32();
    bundle.metadata = store.metadata();

    std::size_t max_layer = 0;
    std::size_t max_sample = 0;
    bool any = false;
    for (const auto& [name, tensor] : store.tensors()) {
        if (auto key = parse_capture_name(name)) {
            any = true;
            max_layer = std::max(max_layer, key->layer);
            max_sample = std::max(max_sample, key->sample);
        }
    }
    if (!any) throw Error(Errc::missing_tensor, "no layer captures in bundle");
    bundle.num_layers = max_layer + 1;
    bundle.num_samples = max_sample + 1;

    auto fetch = [&](const std::string& name) {
        if (!store.contains(name)) throw Error(Errc::missing_tensor, name);
        const Tensor& t = store.at(name);
        if (t.dtype != DType::f32 || t.shape.size() != 1 || t.shape[0] != bundle.dim) {
            throw Error(Errc::dimension_mismatch,
                        name + " must be an F32 vector of length " + std::to_string(bundle.dim));
        }
        return t.to_f32();
    };

    bundle.x_in.resize(bundle.num_layers);
    bundle.x_out.resize(bundle.num_layers);
    for (std::size_t i = 0; i < bundle.num_layers; ++i) {
        for (std::size_t s = 0; s < bundle.num_samples; ++s) {
            bundle.x_in[i].push_back(fetch(bundle_input_name(i, s)));
            bundle.x_out[i].push_back(fetch(bundle_output_name(i, s)));
        }
    }
    return bundle;
}

TensorStore bundle_to_store(const CalibrationBundle& bundle) {
    TensorStore store;
    store.metadata() = bundle.metadata;
    store.metadata()["bundle_version"] = "1";
    store.add(kEmbeddingName, Tensor::from_f32({bundle.vocab, bundle.dim}, bundle.embedding));
    for (std::size_t i = 0; i < bundle.num_layers; ++i) {
        for (std::size_t s = 0; s < bundle.num_samples; ++s) {
            store.add(bundle_input_name(i, s), Tensor::from_f32({bundle.dim}, bundle.x_in[i][s]));
            store.add(bundle_output_name(i, s), Tensor::from_f32({bundle.dim}, bundle.x_out[i][s]));
        }
    }
    return store;
}

}  // namespace lsaq
