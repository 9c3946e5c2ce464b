#include <chrono>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "lsaq/cli.hpp"
#include "lsaq/error.hpp"
#include "lsaq/tensor_store.hpp"

namespace {

using namespace lsaq;
using namespace lsaq::cli;

std::shared_ptr<DeviceProbe> make_probe(const std::optional<std::string>& fixture) {
    if (fixture) return std::make_shared<FileDeviceProbe>(*fixture);
    return std::make_shared<NvidiaSmiProbe>();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-specific adaptive quantization toolkit"};
    app.require_subcommand(1);

    // capture-toy
    CaptureOptions capture;
    std::string capture_weights = "toy_weights.safetensors";
    std::string capture_bundle = "toy_bundle.safetensors";
    auto* cap = app.add_subcommand("capture-toy", "Build the seeded toy model and dump a calibration bundle");
    cap->add_option("--seed", capture.config.seed, "PRNG seed");
    cap->add_option("--samples", capture.samples, "Number of calibration prompts")->check(CLI::PositiveNumber);
    cap->add_option("--vocab", capture.config.vocab);
    cap->add_option("--d-model", capture.config.d_model);
    cap->add_option("--layers", capture.config.n_layers);
    cap->add_option("--heads", capture.config.n_heads);
    cap->add_option("--ffn-mult", capture.config.ffn_mult);
    cap->add_option("--max-seq", capture.config.max_seq);
    cap->add_option("--weights", capture_weights, "Output weights store");
    cap->add_option("--bundle", capture_bundle, "Output calibration bundle");

    // importance
    ImportanceOptions imp;
    std::string imp_bundle, imp_out = "importance.json", imp_metric = "jaccard";
    std::optional<std::string> imp_csv;
    auto* importance = app.add_subcommand("importance", "Score layer importance from a calibration bundle");
    importance->add_option("--bundle", imp_bundle)->required();
    importance->add_option("--metric", imp_metric)->check(CLI::IsMember({"jaccard", "cosine"}));
    importance->add_option("--k", imp.k, "Top-k set size")->check(CLI::PositiveNumber);
    importance->add_option("--out", imp_out);
    importance->add_option("--csv", imp_csv, "Also write layer,score CSV");

    // plan
    PlanOptions plan;
    std::string plan_importance, plan_profile, plan_out = "plan.json";
    std::optional<std::string> plan_memory, plan_config, plan_devices;
    double plan_timeout = 300.0;
    bool plan_wait = false;
    auto* plan_cmd = app.add_subcommand("plan", "Allocate per-layer precision under a memory budget");
    plan_cmd->add_option("--importance", plan_importance)->required();
    plan_cmd->add_option("--profile", plan_profile)->required();
    plan_cmd->add_option("--memory", plan_memory, "Budget, e.g. 6GB or 8GiB (overrides LSAQ_MEMORY_BUDGET)");
    plan_cmd->add_option("--config", plan_config, "JSON config with memory_budget");
    plan_cmd->add_option("--devices", plan_devices, "Device fixture JSON used instead of nvidia-smi");
    plan_cmd->add_flag("--wait", plan_wait, "Poll every second while memory is insufficient");
    plan_cmd->add_option("--timeout", plan_timeout, "Seconds to keep polling with --wait");
    plan_cmd->add_option("--out", plan_out);

    // quantize
    QuantizeOptions quant;
    std::string q_weights, q_plan, q_out = "quantized.safetensors";
    auto* quantize = app.add_subcommand("quantize", "Apply a plan to a weights store");
    quantize->add_option("--weights", q_weights)->required();
    quantize->add_option("--plan", q_plan)->required();
    quantize->add_option("--out", q_out);

    // eval-toy
    EvalOptions eval;
    std::string e_original, e_quantized;
    std::optional<std::string> e_out;
    auto* eval_cmd = app.add_subcommand("eval-toy", "Compare toy-model perplexity before and after quantization");
    eval_cmd->add_option("--weights", e_original)->required();
    eval_cmd->add_option("--quantized", e_quantized)->required();
    eval_cmd->add_option("--seed", eval.corpus_seed, "Corpus seed");
    eval_cmd->add_option("--out", e_out);

    // probe
    std::optional<std::string> p_devices, p_memory, p_config;
    auto* probe = app.add_subcommand("probe", "List devices and the resolved memory budget");
    probe->add_option("--devices", p_devices, "Device fixture JSON used instead of nvidia-smi");
    probe->add_option("--memory", p_memory);
    probe->add_option("--config", p_config);

    // report
    std::vector<std::string> r_plans;
    auto* report = app.add_subcommand("report", "Print plans as a strategy table");
    report->add_option("plans", r_plans, "Plan files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*cap) {
            capture.weights_out = capture_weights;
            capture.bundle_out = capture_bundle;
            cmd_capture_toy(capture);
            std::cout << "wrote " << capture_weights << " and " << capture_bundle << "\n";
        } else if (*importance) {
            imp.bundle = imp_bundle;
            imp.out = imp_out;
            imp.metric = parse_metric(imp_metric);
            if (imp_csv) imp.csv = *imp_csv;
            const auto r = cmd_importance(imp);
            std::cout << report_to_json(r);
        } else if (*plan_cmd) {
            plan.importance = plan_importance;
            plan.profile = plan_profile;
            plan.out = plan_out;
            plan.memory = plan_memory;
            if (plan_config) plan.config = *plan_config;
            plan.probe = make_probe(plan_devices);
            plan.retry.wait = plan_wait;
            plan.retry.interval = std::chrono::seconds(1);
            plan.retry.timeout = std::chrono::milliseconds(static_cast<long long>(plan_timeout * 1000.0));
            const auto p = cmd_plan(plan, [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); });
            std::cout << format_strategy_table(std::span<const QuantPlan>(&p, 1));
        } else if (*quantize) {
            quant.weights = q_weights;
            quant.plan = q_plan;
            quant.out = q_out;
            cmd_quantize(quant);
            std::cout << "wrote " << q_out << "\n";
        } else if (*eval_cmd) {
            eval.original = e_original;
            eval.quantized = e_quantized;
            if (e_out) eval.out = *e_out;
            std::cout << eval_to_json(cmd_eval_toy(eval));
        } else if (*probe) {
            std::optional<fs::path> config;
            if (p_config) config = *p_config;
            std::cout << probe_to_text(cmd_probe(make_probe(p_devices), p_memory, config));
        } else if (*report) {
            std::cout << cmd_report({r_plans.begin(), r_plans.end()});
        }
    } catch (const std::exception& e) {
        std::cerr << "lsaq: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kSuccess;
}
