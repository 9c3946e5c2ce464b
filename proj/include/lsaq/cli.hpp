#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lsaq/budget.hpp"
#include "lsaq/importance.hpp"
#include "lsaq/planner.hpp"
#include "lsaq/toy_model.hpp"

// Pipeline commands behind the `lsaq` executable. Each reads and writes files
// only; identical inputs produce identical output bytes.
namespace lsaq::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kSuccess = 0, kFailure = 1, kInsufficientMemory = 2 };

int exit_code_for(const std::exception& e);

struct CaptureOptions {
    toy::ToyConfig config;
    std::size_t samples = 1;
    fs::path weights_out = "toy_weights.safetensors";
    fs::path bundle_out = "toy_bundle.safetensors";
};

void cmd_capture_toy(const CaptureOptions& options);

struct ImportanceOptions {
    fs::path bundle;
    fs::path out = "importance.json";
    Metric metric = Metric::jaccard;
    std::size_t k = kDefaultTopK;
    std::optional<fs::path> csv;
};

ImportanceReport cmd_importance(const ImportanceOptions& options);

struct PlanOptions {
    fs::path importance;
    fs::path profile;
    fs::path out = "plan.json";
    std::optional<std::string> memory;      // --memory
    std::optional<fs::path> config;         // JSON with "memory_budget"
    std::shared_ptr<DeviceProbe> probe;     // lowest-priority budget source
    RetryPolicy retry;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

// Budget sources in priority order: flag, LSAQ_MEMORY_BUDGET, config, probe.
std::vector<std::unique_ptr<BudgetProvider>> budget_providers(const std::optional<std::string>& memory,
                                                              const std::optional<fs::path>& config,
                                                              std::shared_ptr<DeviceProbe> probe);

QuantPlan cmd_plan(const PlanOptions& options, const Sleeper& sleep);

struct QuantizeOptions {
    fs::path weights;
    fs::path plan;
    fs::path out = "quantized.safetensors";
};

void cmd_quantize(const QuantizeOptions& options);

struct EvalResult {
    double ppl_fp = 0.0;
    double ppl_quant = 0.0;
    double relative_delta = 0.0;  // (ppl_quant - ppl_fp) / ppl_fp
};

struct EvalOptions {
    fs::path original;
    fs::path quantized;
    std::uint64_t corpus_seed = toy::kCorpusSeed;
    std::optional<fs::path> out;
};

EvalResult cmd_eval_toy(const EvalOptions& options);
std::string eval_to_json(const EvalResult& result);

struct ProbeResult {
    std::vector<DeviceReport> devices;
    std::optional<std::string> chosen;
    std::optional<ResolvedBudget> budget;
};

ProbeResult cmd_probe(std::shared_ptr<DeviceProbe> probe, const std::optional<std::string>& memory,
                      const std::optional<fs::path>& config);
std::string probe_to_text(const ProbeResult& result);

// Table of one or more plan files.
std::string cmd_report(const std::vector<fs::path>& plans);

}  // namespace lsaq::cli
