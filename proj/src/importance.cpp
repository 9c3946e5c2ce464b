#include "lsaq/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "lsaq/error.hpp"

namespace lsaq {

namespace {

float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        workers.emplace_back([&, t] {
            for (std::size_t i = t; i < count; i += threads) fn(i);
        });
    }
}

}  // namespace

std::string_view to_string(Metric metric) {
    return metric == Metric::jaccard ? "jaccard" : "cosine";
}

Metric parse_metric(std::string_view name) {
    if (name == "jaccard") return Metric::jaccard;
    if (name == "cosine") return Metric::cosine;
    throw Error(Errc::invalid_argument, "unknown metric '" + std::string(name) + "'");
}

std::vector<float> project_to_vocab(std::span<const float> hidden, MatrixView embedding) {
    if (hidden.size() != embedding.cols) {
        throw Error(Errc::dimension_mismatch, "hidden size " + std::to_string(hidden.size()) +
                                                  " vs embedding width " + std::to_string(embedding.cols));
    }
    std::vector<float> logits(embedding.rows);
    for (std::size_t v = 0; v < embedding.rows; ++v) logits[v] = dot(hidden, embedding.row(v));
    return logits;
}

TokenSet topk_indices(std::span<const float> logits, std::size_t k) {
    if (k == 0 || k > logits.size()) {
        throw Error(Errc::invalid_argument,
                    "k=" + std::to_string(k) + " outside [1, " + std::to_string(logits.size()) + "]");
    }
    if (std::any_of(logits.begin(), logits.end(), [](float x) { return std::isnan(x); })) {
        throw Error(Errc::invalid_argument, "NaN logit");
    }
    std::vector<std::size_t> order(logits.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return logits[a] != logits[b] ? logits[a] > logits[b] : a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return TokenSet{std::move(order)};
}

float jaccard_importance(const TokenSet& a, const TokenSet& b) {
    if (a.indices.empty() || b.indices.empty()) throw Error(Errc::invalid_argument, "empty token set");
    std::size_t common = 0;
    auto ia = a.indices.begin();
    auto ib = b.indices.begin();
    while (ia != a.indices.end() && ib != b.indices.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++common;
            ++ia;
            ++ib;
        }
    }
    const std::size_t united = a.size() + b.size() - common;
    return 1.0f - static_cast<float>(common) / static_cast<float>(united);
}

float cosine_importance(std::span<const float> x_in, std::span<const float> x_out) {
    if (x_in.size() != x_out.size()) throw Error(Errc::dimension_mismatch, "cosine operands differ in length");
    const float nin = dot(x_in, x_in);
    const float nout = dot(x_out, x_out);
    if (nin == 0.0f || nout == 0.0f) throw Error(Errc::invalid_argument, "zero vector in cosine");
    // sqrt(fl(n*n)) == n, so identical inputs give cos == 1 exactly.
    const float cos = std::clamp(dot(x_in, x_out) / std::sqrt(nin * nout), -1.0f, 1.0f);
    return 1.0f - cos;
}

std::vector<std::size_t> ascending_order(std::span<const LayerScore> scores) {
    std::vector<LayerScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const LayerScore& a, const LayerScore& b) {
        return a.score != b.score ? a.score < b.score : a.layer < b.layer;
    });
    std::vector<std::size_t> out;
    out.reserve(sorted.size());
    for (const auto& s : sorted) out.push_back(s.layer);
    return out;
}

ImportanceReport score_layers(const CalibrationBundle& bundle, Metric metric, std::size_t k, unsigned threads) {
    if (bundle.num_layers == 0 || bundle.num_samples == 0) {
        throw Error(Errc::invalid_argument, "bundle has no layers or samples");
    }
    const MatrixView embedding{bundle.embedding, bundle.vocab, bundle.dim};
    if (metric == Metric::jaccard && (k == 0 || k > bundle.vocab)) {
        throw Error(Errc::invalid_argument, "k=" + std::to_string(k) + " outside [1, V]");
    }

    const std::size_t samples = bundle.num_samples;
    std::vector<float> per_sample(bundle.num_layers * samples);
    parallel_for(per_sample.size(), threads, [&](std::size_t job) {
        const std::size_t layer = job / samples;
        const std::size_t sample = job % samples;
        const auto& in = bundle.x_in[layer][sample];
        const auto& out = bundle.x_out[layer][sample];
        if (metric == Metric::jaccard) {
            per_sample[job] = jaccard_importance(topk_indices(project_to_vocab(in, embedding), k),
                                                 topk_indices(project_to_vocab(out, embedding), k));
        } else {
            per_sample[job] = cosine_importance(in, out);
        }
    });

    ImportanceReport report;
    report.metric = metric;
    report.k = k;
    for (std::size_t layer = 0; layer < bundle.num_layers; ++layer) {
        float sum = 0.0f;
        for (std::size_t s = 0; s < samples; ++s) sum += per_sample[layer * samples + s];
        report.per_layer.push_back({layer, sum / static_cast<float>(samples)});
    }
    report.ordering = ascending_order(report.per_layer);
    return report;
}

std::vector<std::size_t> rank_ascending(const ImportanceReport& report) { return report.ordering; }

std::string report_to_json(const ImportanceReport& report) {
    nlohmann::json j;
    j["metric"] = to_string(report.metric);
    j["k"] = report.metric == Metric::jaccard ? nlohmann::json(report.k) : nlohmann::json(nullptr);
    j["scores"] = nlohmann::json::array();
    for (const auto& s : report.per_layer) j["scores"].push_back({{"layer", s.layer}, {"score", s.score}});
    j["ordering"] = report.ordering;
    return j.dump(2) + "\n";
}

ImportanceReport report_from_json(std::string_view text) {
    ImportanceReport report;
    try {
        const auto j = nlohmann::json::parse(text);
        report.metric = parse_metric(j.at("metric").get<std::string>());
        if (!j.at("k").is_null()) report.k = j.at("k").get<std::size_t>();
        for (const auto& s : j.at("scores")) {
            report.per_layer.push_back({s.at("layer").get<std::size_t>(), s.at("score").get<float>()});
        }
        report.ordering = j.at("ordering").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::bad_header, std::string("importance report: ") + e.what());
    }

    const std::size_t n = report.per_layer.size();
    std::vector<bool> seen(n, false);
    for (const auto& s : report.per_layer) {
        if (s.layer >= n || seen[s.layer]) throw Error(Errc::invalid_argument, "importance report layers are not 0..L-1");
        seen[s.layer] = true;
    }
    if (report.ordering != ascending_order(report.per_layer)) {
        throw Error(Errc::invalid_argument, "importance report ordering disagrees with its scores");
    }
    return report;
}

std::string report_to_csv(const ImportanceReport& report) {
    std::ostringstream out;
    out.precision(9);
    out << "layer,score\n";
    for (const auto& s : report.per_layer) out << s.layer << ',' << s.score << '\n';
    return out.str();
}

}  // namespace lsaq
