#include "lsaq/cli.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "lsaq/bundle.hpp"
#include "lsaq/error.hpp"
#include "lsaq/quantizer.hpp"
#include "lsaq/tensor_store.hpp"

namespace lsaq::cli {

int exit_code_for(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e); err && err->code() == Errc::insufficient_memory) {
        return kInsufficientMemory;
    }
    return kFailure;
}

void cmd_capture_toy(const CaptureOptions& options) {
    const auto weights = toy::init_toy(options.config);
    const auto bundle = toy::capture_bundle(weights, options.samples);
    save_store(options.weights_out, toy::weights_to_store(weights));
    save_store(options.bundle_out, bundle_to_store(bundle));
}

ImportanceReport cmd_importance(const ImportanceOptions& options) {
    const auto bundle = load_bundle(load_store(options.bundle));
    auto report = score_layers(bundle, options.metric, options.k);
    write_text_file(options.out, report_to_json(report));
    if (options.csv) write_text_file(*options.csv, report_to_csv(report));
    return report;
}

std::vector<std::unique_ptr<BudgetProvider>> budget_providers(const std::optional<std::string>& memory,
                                                              const std::optional<fs::path>& config,
                                                              std::shared_ptr<DeviceProbe> probe) {
    std::vector<std::unique_ptr<BudgetProvider>> providers;
    providers.push_back(std::make_unique<FlagBudget>(memory));
    providers.push_back(std::make_unique<EnvBudget>());
    providers.push_back(std::make_unique<ConfigFileBudget>(config));
    if (probe) providers.push_back(std::make_unique<ProbeBudget>(std::move(probe)));
    return providers;
}

QuantPlan cmd_plan(const PlanOptions& options, const Sleeper& sleep) {
    const auto report = report_from_json(read_text_file(options.importance));
    const auto profile = profile_from_json(read_text_file(options.profile));
    if (report.per_layer.size() != profile.num_layers) {
        throw Error(Errc::invalid_argument, "importance report has " + std::to_string(report.per_layer.size()) +
                                                " layers, profile has " + std::to_string(profile.num_layers));
    }
    auto providers = budget_providers(options.memory, options.config, options.probe);
    const auto ranked = rank_ascending(report);
    const auto plan = plan_with_retry([&] { return resolve_budget(providers).bytes; }, ranked, profile,
                                      options.retry, sleep);
    write_text_file(options.out, plan_to_json(plan));
    return plan;
}

void cmd_quantize(const QuantizeOptions& options) {
    const auto weights = load_store(options.weights);
    const auto plan = plan_from_json(read_text_file(options.plan));
    save_store(options.out, apply_plan(weights, plan));
}

EvalResult cmd_eval_toy(const EvalOptions& options) {
    const auto original = toy::weights_from_store(load_store(options.original));
    const auto quantized = toy::load_dequantized(load_store(options.quantized));
    if (!(original.config == quantized.config)) {
        throw Error(Errc::shape_mismatch, "original and quantized stores describe different toy configs");
    }
    const auto corpus = toy::default_corpus(original.config, options.corpus_seed);
    EvalResult result;
    result.ppl_fp = toy::perplexity(original, corpus);
    result.ppl_quant = toy::perplexity(quantized, corpus);
    result.relative_delta = (result.ppl_quant - result.ppl_fp) / result.ppl_fp;
    if (options.out) write_text_file(*options.out, eval_to_json(result));
    return result;
}

std::string eval_to_json(const EvalResult& result) {
    nlohmann::json j;
    j["ppl_fp"] = result.ppl_fp;
    j["ppl_quant"] = result.ppl_quant;
    j["relative_delta"] = result.relative_delta;
    return j.dump(2) + "\n";
}

ProbeResult cmd_probe(std::shared_ptr<DeviceProbe> probe, const std::optional<std::string>& memory,
                      const std::optional<fs::path>& config) {
    ProbeResult result;
    result.devices = probe->devices();
    if (result.devices.empty()) throw Error(Errc::invalid_argument, "no devices reported");
    result.chosen = select_device(result.devices).device_id;
    auto providers = budget_providers(memory, config, std::move(probe));
    result.budget = resolve_budget(providers);
    return result;
}

std::string probe_to_text(const ProbeResult& result) {
    std::ostringstream out;
    for (const auto& d : result.devices) {
        out << (result.chosen && *result.chosen == d.device_id ? "* " : "  ") << d.device_id << "\t" << d.free_bytes
            << " B free\n";
    }
    if (result.budget) out << "budget: " << result.budget->bytes << " B (" << result.budget->source << ")\n";
    return out.str();
}

std::string cmd_report(const std::vector<fs::path>& plans) {
    std::vector<QuantPlan> loaded;
    for (const auto& path : plans) loaded.push_back(plan_from_json(read_text_file(path)));
    return format_strategy_table(loaded);
}

}  // namespace lsaq::cli
