#include "lsaq/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "lsaq/error.hpp"
#include "lsaq/quantizer.hpp"
#include "lsaq/rng.hpp"

namespace lsaq::toy {

namespace {

constexpr float kNormEps = 1e-6f;
constexpr std::uint64_t kPromptStream = 0x5eed00000000ull;

std::vector<float> draw(SplitMix64& rng, std::size_t n, double stddev) {
    // Uniform on [-a, a) has standard deviation a / sqrt(3).
    const double half_width = stddev * std::sqrt(3.0);
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(half_width * rng.symmetric());
    return out;
}

// y = W x with W (rows x cols).
void matvec(std::span<const float> w, std::span<const float> x, std::span<float> y) {
    const std::size_t cols = x.size();
    for (std::size_t r = 0; r < y.size(); ++r) {
        float acc = 0.0f;
        const float* row = w.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] = acc;
    }
}

void rms_norm(std::span<const float> x, std::span<const float> gain, std::span<float> out) {
    float ss = 0.0f;
    for (float v : x) ss += v * v;
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(x.size()) + kNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

std::string layer_name(std::size_t layer, const char* part) {
    return "layers." + std::to_string(layer) + "." + part;
}

std::size_t meta_size(const TensorStore& store, const std::string& key) {
    const auto it = store.metadata().find(key);
    if (it == store.metadata().end()) throw Error(Errc::missing_tensor, "metadata '" + key + "'");
    return std::stoull(it->second);
}

std::vector<float> fetch(const TensorStore& store, const std::string& name, const Shape& shape) {
    const Tensor& t = store.at(name);
    if (t.shape != shape) throw Error(Errc::shape_mismatch, name);
    if (t.dtype != DType::f32 && t.dtype != DType::f16) throw Error(Errc::invalid_argument, name + " is not float");
    return t.to_f32();
}

// Full forward pass over `tokens`; returns the final residual stream (seq x d)
// and fills captures for the last position.
std::vector<float> run(const ToyWeights& w, std::span<const std::uint32_t> tokens, Capture* capture,
                       AttentionTrace* trace) {
    const ToyConfig& cfg = w.config;
    const std::size_t seq = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t hd = cfg.head_dim();
    const std::size_t ffn = cfg.ffn_dim();
    if (seq == 0 || seq > cfg.max_seq) {
        throw Error(Errc::invalid_argument, "sequence length " + std::to_string(seq) + " outside [1, " +
                                                std::to_string(cfg.max_seq) + "]");
    }

    std::vector<float> x(seq * d);
    for (std::size_t t = 0; t < seq; ++t) {
        if (tokens[t] >= cfg.vocab) throw Error(Errc::invalid_argument, "token id " + std::to_string(tokens[t]));
        for (std::size_t i = 0; i < d; ++i) x[t * d + i] = w.embed[tokens[t] * d + i] + w.pos[t * d + i];
    }

    std::vector<float> h(seq * d), q(seq * d), k(seq * d), v(seq * d), mixed(seq * d), proj(d);
    std::vector<float> hidden(ffn), scores(seq);
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    const auto last = [&](const std::vector<float>& buf) {
        return std::vector<float>(buf.end() - static_cast<std::ptrdiff_t>(d), buf.end());
    };

    if (trace) trace->probs.assign(cfg.n_layers, {});
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const ToyLayer& layer = w.layers[l];
        if (capture) capture->x_in.push_back(last(x));

        auto row = [d](std::vector<float>& buf, std::size_t t) { return std::span<float>(buf).subspan(t * d, d); };
        for (std::size_t t = 0; t < seq; ++t) {
            rms_norm(row(x, t), layer.norm1, row(h, t));
            matvec(layer.wq, row(h, t), row(q, t));
            matvec(layer.wk, row(h, t), row(k, t));
            matvec(layer.wv, row(h, t), row(v, t));
        }

        if (trace) trace->probs[l].assign(cfg.n_heads, std::vector<float>(seq * seq, 0.0f));
        std::fill(mixed.begin(), mixed.end(), 0.0f);
        for (std::size_t head = 0; head < cfg.n_heads; ++head) {
            const std::size_t off = head * hd;
            for (std::size_t t = 0; t < seq; ++t) {
                float peak = -std::numeric_limits<float>::infinity();
                for (std::size_t s = 0; s <= t; ++s) {
                    float dot = 0.0f;
                    for (std::size_t i = 0; i < hd; ++i) dot += q[t * d + off + i] * k[s * d + off + i];
                    scores[s] = dot * scale;
                    peak = std::max(peak, scores[s]);
                }
                float denom = 0.0f;
                for (std::size_t s = 0; s <= t; ++s) {
                    scores[s] = std::exp(scores[s] - peak);
                    denom += scores[s];
                }
                for (std::size_t s = 0; s <= t; ++s) {
                    const float p = scores[s] / denom;
                    if (trace) trace->probs[l][head][t * seq + s] = p;
                    for (std::size_t i = 0; i < hd; ++i) mixed[t * d + off + i] += p * v[s * d + off + i];
                }
            }
        }

        for (std::size_t t = 0; t < seq; ++t) {
            matvec(layer.wo, row(mixed, t), proj);
            for (std::size_t i = 0; i < d; ++i) x[t * d + i] += proj[i];
            rms_norm(row(x, t), layer.norm2, row(h, t));
            matvec(layer.w1, row(h, t), hidden);
            for (auto& a : hidden) a = silu(a);
            matvec(layer.w2, hidden, proj);
            for (std::size_t i = 0; i < d; ++i) x[t * d + i] += proj[i];
        }
        if (capture) capture->x_out.push_back(last(x));
    }
    return x;
}

std::vector<float> head_logits(const ToyWeights& w, std::span<const float> residual) {
    const std::size_t d = w.config.d_model;
    std::vector<float> normed(d), logits(w.config.vocab);
    rms_norm(residual, w.final_norm, normed);
    matvec(w.embed, normed, logits);
    return logits;
}

}  // namespace

void ToyConfig::validate() const {
    if (vocab == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || ffn_mult == 0 || max_seq == 0) {
        throw Error(Errc::invalid_argument, "toy config sizes must be positive");
    }
    if (d_model % n_heads != 0) throw Error(Errc::invalid_argument, "d_model must be divisible by n_heads");
}

ToyWeights init_toy(const ToyConfig& config) {
    config.validate();
    const std::size_t d = config.d_model;
    const std::size_t ffn = config.ffn_dim();
    const double stddev = 0.02 / std::sqrt(static_cast<double>(d));

    SplitMix64 rng(config.seed);
    ToyWeights w;
    w.config = config;
    w.embed = draw(rng, config.vocab * d, stddev);
    w.pos = draw(rng, config.max_seq * d, stddev);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        ToyLayer layer;
        layer.wq = draw(rng, d * d, stddev);
        layer.wk = draw(rng, d * d, stddev);
        layer.wv = draw(rng, d * d, stddev);
        layer.wo = draw(rng, d * d, stddev);
        layer.w1 = draw(rng, ffn * d, stddev);
        layer.w2 = draw(rng, d * ffn, stddev);
        layer.norm1.assign(d, 1.0f);
        layer.norm2.assign(d, 1.0f);
        w.layers.push_back(std::move(layer));
    }
    w.final_norm.assign(d, 1.0f);
    return w;
}

std::uint64_t parameter_count(const ToyConfig& c) {
    const std::uint64_t d = c.d_model;
    return c.vocab * d + c.max_seq * d + c.n_layers * (4 * d * d + 2 * c.ffn_mult * d * d + 2 * d) + d;
}

void zero_layers(ToyWeights& weights) {
    for (auto& layer : weights.layers) {
        for (auto* t : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w1, &layer.w2, &layer.norm1, &layer.norm2}) {
            std::fill(t->begin(), t->end(), 0.0f);
        }
    }
}

TensorStore weights_to_store(const ToyWeights& w) {
    const ToyConfig& c = w.config;
    const std::size_t d = c.d_model;
    const std::size_t ffn = c.ffn_dim();
    TensorStore store;
    auto& meta = store.metadata();
    meta["model_id"] = "toy";
    meta["toy.vocab"] = std::to_string(c.vocab);
    meta["toy.d_model"] = std::to_string(c.d_model);
    meta["toy.n_layers"] = std::to_string(c.n_layers);
    meta["toy.n_heads"] = std::to_string(c.n_heads);
    meta["toy.ffn_mult"] = std::to_string(c.ffn_mult);
    meta["toy.max_seq"] = std::to_string(c.max_seq);
    meta["toy.seed"] = std::to_string(c.seed);

    store.add(kEmbeddingName, Tensor::from_f32({c.vocab, d}, w.embed));
    store.add("embed.pos", Tensor::from_f32({c.max_seq, d}, w.pos));
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const ToyLayer& layer = w.layers[l];
        store.add(layer_name(l, "wq"), Tensor::from_f32({d, d}, layer.wq));
        store.add(layer_name(l, "wk"), Tensor::from_f32({d, d}, layer.wk));
        store.add(layer_name(l, "wv"), Tensor::from_f32({d, d}, layer.wv));
        store.add(layer_name(l, "wo"), Tensor::from_f32({d, d}, layer.wo));
        store.add(layer_name(l, "w1"), Tensor::from_f32({ffn, d}, layer.w1));
        store.add(layer_name(l, "w2"), Tensor::from_f32({d, ffn}, layer.w2));
        store.add(layer_name(l, "norm1"), Tensor::from_f32({d}, layer.norm1));
        store.add(layer_name(l, "norm2"), Tensor::from_f32({d}, layer.norm2));
    }
    store.add("final_norm", Tensor::from_f32({d}, w.final_norm));
    return store;
}

ToyWeights weights_from_store(const TensorStore& store) {
    ToyConfig c;
    c.vocab = meta_size(store, "toy.vocab");
    c.d_model = meta_size(store, "toy.d_model");
    c.n_layers = meta_size(store, "toy.n_layers");
    c.n_heads = meta_size(store, "toy.n_heads");
    c.ffn_mult = meta_size(store, "toy.ffn_mult");
    c.max_seq = meta_size(store, "toy.max_seq");
    c.seed = meta_size(store, "toy.seed");
    c.validate();

    const std::uint64_t d = c.d_model;
    const std::uint64_t ffn = c.ffn_dim();
    ToyWeights w;
    w.config = c;
    w.embed = fetch(store, kEmbeddingName, {c.vocab, d});
    w.pos = fetch(store, "embed.pos", {c.max_seq, d});
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        ToyLayer layer;
        layer.wq = fetch(store, layer_name(l, "wq"), {d, d});
        layer.wk = fetch(store, layer_name(l, "wk"), {d, d});
        layer.wv = fetch(store, layer_name(l, "wv"), {d, d});
        layer.wo = fetch(store, layer_name(l, "wo"), {d, d});
        layer.w1 = fetch(store, layer_name(l, "w1"), {ffn, d});
        layer.w2 = fetch(store, layer_name(l, "w2"), {d, ffn});
        layer.norm1 = fetch(store, layer_name(l, "norm1"), {d});
        layer.norm2 = fetch(store, layer_name(l, "norm2"), {d});
        w.layers.push_back(std::move(layer));
    }
    w.final_norm = fetch(store, "final_norm", {d});
    return w;
}

ToyWeights load_dequantized(const TensorStore& store) { return weights_from_store(dequantize_store(store)); }

Capture forward_capture(const ToyWeights& weights, std::span<const std::uint32_t> tokens, AttentionTrace* trace) {
    Capture capture;
    const auto x = run(weights, tokens, &capture, trace);
    const std::size_t d = weights.config.d_model;
    capture.logits = head_logits(weights, std::span<const float>(x).subspan(x.size() - d, d));
    return capture;
}

std::vector<float> forward_logits(const ToyWeights& weights, std::span<const std::uint32_t> tokens) {
    const auto x = run(weights, tokens, nullptr, nullptr);
    const std::size_t d = weights.config.d_model;
    std::vector<float> out;
    out.reserve(tokens.size() * weights.config.vocab);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        auto logits = head_logits(weights, std::span<const float>(x).subspan(t * d, d));
        out.insert(out.end(), logits.begin(), logits.end());
    }
    return out;
}

double perplexity(const ToyWeights& weights, std::span<const std::uint32_t> corpus) {
    if (corpus.size() < 2) throw Error(Errc::invalid_argument, "perplexity needs at least two tokens");
    const std::size_t window = weights.config.max_seq;
    const std::size_t vocab = weights.config.vocab;
    if (window < 2) throw Error(Errc::invalid_argument, "max_seq must be at least 2 for perplexity");

    double nll = 0.0;
    std::size_t predicted = 0;
    for (std::size_t start = 0; start + 1 < corpus.size(); start += window - 1) {
        const auto chunk = corpus.subspan(start, std::min(window, corpus.size() - start));
        const auto logits = forward_logits(weights, chunk);
        for (std::size_t t = 0; t + 1 < chunk.size(); ++t) {
            const float* row = logits.data() + t * vocab;
            double peak = row[0];
            for (std::size_t v = 1; v < vocab; ++v) peak = std::max(peak, static_cast<double>(row[v]));
            double sum = 0.0;
            for (std::size_t v = 0; v < vocab; ++v) sum += std::exp(static_cast<double>(row[v]) - peak);
            nll -= static_cast<double>(row[chunk[t + 1]]) - peak - std::log(sum);
            ++predicted;
        }
    }
    return std::exp(nll / static_cast<double>(predicted));
}

std::vector<std::uint32_t> zipf_tokens(std::size_t vocab, std::size_t length, std::uint64_t seed) {
    std::vector<double> cdf(vocab);
    double total = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
        total += 1.0 / static_cast<double>(v + 1);
        cdf[v] = total;
    }
    SplitMix64 rng(seed);
    std::vector<std::uint32_t> out(length);
    for (auto& tok : out) {
        const double u = rng.uniform() * total;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        tok = static_cast<std::uint32_t>(std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), vocab - 1));
    }
    return out;
}

std::vector<std::uint32_t> default_corpus(const ToyConfig& config, std::uint64_t seed) {
    return zipf_tokens(config.vocab, kCorpusLength, seed);
}

std::vector<std::uint32_t> calibration_prompt(const ToyConfig& config, std::uint64_t seed, std::size_t sample) {
    const std::size_t length = std::min(kPromptLength, config.max_seq);
    return zipf_tokens(config.vocab, length, SplitMix64(seed ^ kPromptStream).next() + sample);
}

CalibrationBundle capture_bundle(const ToyWeights& weights, std::size_t samples) {
    if (samples == 0) throw Error(Errc::invalid_argument, "need at least one calibration sample");
    const ToyConfig& c = weights.config;
    CalibrationBundle bundle;
    bundle.num_layers = c.n_layers;
    bundle.num_samples = samples;
    bundle.dim = c.d_model;
    bundle.vocab = c.vocab;
    bundle.embedding = weights.embed;
    bundle.x_in.assign(c.n_layers, {});
    bundle.x_out.assign(c.n_layers, {});
    bundle.metadata["bundle_version"] = "1";
    bundle.metadata["model_id"] = "toy";
    for (std::size_t s = 0; s < samples; ++s) {
        const auto prompt = calibration_prompt(c, c.seed, s);
        auto cap = forward_capture(weights, prompt);
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            bundle.x_in[l].push_back(std::move(cap.x_in[l]));
            bundle.x_out[l].push_back(std::move(cap.x_out[l]));
        }
    }
    return bundle;
}

ModelProfile toy_profile(const ToyConfig& c) {
    const std::uint64_t d = c.d_model;
    ModelProfile p;
    p.model_id = "toy";
    p.num_layers = c.n_layers;
    p.layer_param_count = 4 * d * d + 2 * c.ffn_mult * d * d + 2 * d;
    p.fixed_param_count = c.vocab * d + c.max_seq * d + d;
    p.scale_rows_per_layer = 4 * d + c.ffn_dim() + d;
    p.bytes_per_scale = 4;
    p.headroom_bytes = 0;
    return p;
}

}  // namespace lsaq::toy
