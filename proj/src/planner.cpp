#include "lsaq/planner.hpp"

#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lsaq/error.hpp"

namespace lsaq {

namespace {

using json = nlohmann::json;

void check_permutation(std::span<const std::size_t> ranked, std::size_t layers) {
    if (ranked.size() != layers) {
        throw Error(Errc::invalid_argument, "ranking has " + std::to_string(ranked.size()) +
                                                " entries for " + std::to_string(layers) + " layers");
    }
    std::vector<bool> seen(layers, false);
    for (auto layer : ranked) {
        if (layer >= layers || seen[layer]) {
            throw Error(Errc::invalid_argument, "ranking is not a permutation of [0, L)");
        }
        seen[layer] = true;
    }
}

json plan_body(const QuantPlan& plan) {
    json j;
    j["model_id"] = plan.model_id;
    j["budget_bytes"] = plan.budget_bytes;
    j["assignment"] = json::array();
    for (auto p : plan.assignment) j["assignment"].push_back(to_string(p));
    j["ordering_used"] = plan.ordering_used;
    j["predicted_bytes"] = plan.predicted_bytes;
    j["average_bits"] = plan.average_bits;
    return j;
}

}  // namespace

std::string_view to_string(Precision p) {
    switch (p) {
        case Precision::fp16: return "fp16";
        case Precision::int8: return "int8";
        case Precision::int4: return "int4";
    }
    return "?";
}

Precision parse_precision(std::string_view name) {
    if (name == "fp16") return Precision::fp16;
    if (name == "int8") return Precision::int8;
    if (name == "int4") return Precision::int4;
    throw Error(Errc::invalid_argument, "unknown precision '" + std::string(name) + "'");
}

unsigned bits_of(Precision p) {
    switch (p) {
        case Precision::fp16: return 16;
        case Precision::int8: return 8;
        case Precision::int4: return 4;
    }
    return 0;
}

void ModelProfile::validate() const {
    if (num_layers == 0) throw Error(Errc::invalid_argument, "profile needs at least one layer");
}

ModelProfile profile_from_json(std::string_view text) {
    ModelProfile p;
    try {
        const auto j = json::parse(text);
        p.model_id = j.value("model_id", std::string{});
        p.num_layers = j.at("num_layers").get<std::size_t>();
        p.layer_param_count = j.at("layer_param_count").get<std::uint64_t>();
        p.fixed_param_count = j.at("fixed_param_count").get<std::uint64_t>();
        p.scale_rows_per_layer = j.value("scale_rows_per_layer", std::uint64_t{0});
        p.bytes_per_scale = j.value("bytes_per_scale", std::uint64_t{4});
        p.headroom_bytes = j.value("headroom_bytes", std::uint64_t{0});
        if (j.contains("notes")) {
            const auto& notes = j["notes"];
            if (notes.is_string()) {
                p.notes = notes.get<std::string>();
            } else if (notes.is_array()) {
                for (const auto& line : notes) p.notes += line.get<std::string>() + "\n";
            }
        }
    } catch (const json::exception& e) {
        throw Error(Errc::bad_header, std::string("model profile: ") + e.what());
    }
    p.validate();
    return p;
}

std::string profile_to_json(const ModelProfile& profile) {
    json j;
    j["model_id"] = profile.model_id;
    j["num_layers"] = profile.num_layers;
    j["layer_param_count"] = profile.layer_param_count;
    j["fixed_param_count"] = profile.fixed_param_count;
    j["scale_rows_per_layer"] = profile.scale_rows_per_layer;
    j["bytes_per_scale"] = profile.bytes_per_scale;
    j["headroom_bytes"] = profile.headroom_bytes;
    if (!profile.notes.empty()) j["notes"] = profile.notes;
    return j.dump(2) + "\n";
}

std::uint64_t layer_bytes(const ModelProfile& profile, Precision precision) {
    const std::uint64_t scales = profile.scale_rows_per_layer * profile.bytes_per_scale;
    switch (precision) {
        case Precision::fp16: return 2 * profile.layer_param_count;
        case Precision::int8: return profile.layer_param_count + scales;
        case Precision::int4: return (profile.layer_param_count + 1) / 2 + scales;
    }
    return 0;
}

std::uint64_t estimate_total(const ModelProfile& profile, std::span<const Precision> assignment) {
    if (assignment.size() != profile.num_layers) {
        throw Error(Errc::invalid_argument, "assignment covers " + std::to_string(assignment.size()) +
                                                " of " + std::to_string(profile.num_layers) + " layers");
    }
    std::uint64_t total = 2 * profile.fixed_param_count + profile.headroom_bytes;
    for (auto p : assignment) total += layer_bytes(profile, p);
    return total;
}

std::uint64_t estimate_uniform(const ModelProfile& profile, Precision precision) {
    return estimate_total(profile, PrecisionAssignment(profile.num_layers, precision));
}

PrecisionCounts count_precisions(std::span<const Precision> assignment) {
    PrecisionCounts c;
    for (auto p : assignment) {
        switch (p) {
            case Precision::fp16: ++c.fp16; break;
            case Precision::int8: ++c.int8; break;
            case Precision::int4: ++c.int4; break;
        }
    }
    return c;
}

double average_bits(std::span<const Precision> assignment) {
    if (assignment.empty()) throw Error(Errc::invalid_argument, "empty assignment");
    std::uint64_t bits = 0;
    for (auto p : assignment) bits += bits_of(p);
    return static_cast<double>(bits) / static_cast<double>(assignment.size());
}

QuantPlan allocate_precision(std::span<const std::size_t> ranked, const ModelProfile& profile,
                             std::uint64_t budget_bytes) {
    profile.validate();
    check_permutation(ranked, profile.num_layers);
    const std::size_t layers = profile.num_layers;

    QuantPlan plan;
    plan.model_id = profile.model_id;
    plan.ordering_used.assign(ranked.begin(), ranked.end());
    plan.budget_bytes = budget_bytes;

    const std::uint64_t all_int4 = estimate_uniform(profile, Precision::int4);
    if (budget_bytes >= estimate_uniform(profile, Precision::fp16)) {
        plan.assignment.assign(layers, Precision::fp16);
    } else if (budget_bytes >= estimate_uniform(profile, Precision::int8)) {
        plan.assignment.assign(layers, Precision::int8);
    } else if (budget_bytes >= all_int4) {
        const std::uint64_t spare = budget_bytes - all_int4;
        // Nonzero here: equal INT8/INT4 costs would have taken the all-INT8 branch.
        const std::uint64_t saving = layer_bytes(profile, Precision::int8) - layer_bytes(profile, Precision::int4);
        const std::uint64_t upgradable = std::min<std::uint64_t>(spare / saving, layers);
        const std::size_t n_int4 = layers - static_cast<std::size_t>(upgradable);
        plan.assignment.assign(layers, Precision::int8);
        for (std::size_t i = 0; i < n_int4; ++i) plan.assignment[ranked[i]] = Precision::int4;
    } else {
        throw Error(Errc::insufficient_memory, "budget " + std::to_string(budget_bytes) +
                                                   " B is below the all-INT4 requirement of " +
                                                   std::to_string(all_int4) + " B");
    }

    plan.predicted_bytes = estimate_total(profile, plan.assignment);
    plan.average_bits = average_bits(plan.assignment);
    return plan;
}

std::string plan_id(const QuantPlan& plan) {
    const std::string canonical = plan_body(plan).dump();
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char c : canonical) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::string plan_to_json(const QuantPlan& plan) {
    json j = plan_body(plan);
    j["plan_id"] = plan_id(plan);
    return j.dump(2) + "\n";
}

QuantPlan plan_from_json(std::string_view text) {
    QuantPlan plan;
    try {
        const auto j = json::parse(text);
        plan.model_id = j.value("model_id", std::string{});
        plan.budget_bytes = j.at("budget_bytes").get<std::uint64_t>();
        for (const auto& p : j.at("assignment")) plan.assignment.push_back(parse_precision(p.get<std::string>()));
        plan.ordering_used = j.at("ordering_used").get<std::vector<std::size_t>>();
        plan.predicted_bytes = j.at("predicted_bytes").get<std::uint64_t>();
        plan.average_bits = j.at("average_bits").get<double>();
    } catch (const json::exception& e) {
        throw Error(Errc::bad_header, std::string("plan: ") + e.what());
    }
    if (plan.assignment.empty()) throw Error(Errc::invalid_argument, "plan has no layers");
    check_permutation(plan.ordering_used, plan.assignment.size());
    return plan;
}

std::string format_strategy_table(std::span<const QuantPlan> plans) {
    std::ostringstream out;
    char line[128];
    std::snprintf(line, sizeof line, "%-12s | %10s | %10s | %10s | %9s\n", "Memory", "FP16 Layer", "INT8 Layer",
                  "INT4 Layer", "Avg. Bits");
    out << line << std::string(63, '-') << '\n';
    for (const auto& plan : plans) {
        const auto c = plan.counts();
        char mem[32];
        std::snprintf(mem, sizeof mem, "%.2fGB", static_cast<double>(plan.budget_bytes) / 1e9);
        std::snprintf(line, sizeof line, "%-12s | %10zu | %10zu | %10zu | %9g\n", mem, c.fp16, c.int8, c.int4,
                      plan.average_bits);
        out << line;
    }
    return out.str();
}

}  // namespace lsaq
