#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lsaq/planner.hpp"

namespace lsaq {

inline constexpr const char* kBudgetEnvVar = "LSAQ_MEMORY_BUDGET";

struct DeviceReport {
    std::string device_id;
    std::uint64_t free_bytes = 0;
};

// Device with the most free memory; ties go to the smallest id.
const DeviceReport& select_device(std::span<const DeviceReport> reports);

// "6GB" -> 6e9, "8GiB" -> 8 * 2^30. Decimal units KB/MB/GB/TB, binary
// KiB/MiB/GiB/TiB, "B" or no suffix for bytes. Fractions are truncated to
// whole bytes.
std::uint64_t parse_size(std::string_view text);

class DeviceProbe {
public:
    virtual ~DeviceProbe() = default;
    virtual std::vector<DeviceReport> devices() = 0;
};

// JSON fixture: [{"device_id": "gpu0", "free_bytes": 123}, ...]. Re-read on every call.
class FileDeviceProbe : public DeviceProbe {
public:
    explicit FileDeviceProbe(std::filesystem::path path) : path_(std::move(path)) {}
    std::vector<DeviceReport> devices() override;

private:
    std::filesystem::path path_;
};

// Free memory per GPU as reported by nvidia-smi; empty when unavailable.
class NvidiaSmiProbe : public DeviceProbe {
public:
    std::vector<DeviceReport> devices() override;
};

std::vector<DeviceReport> parse_device_fixture(std::string_view json_text);

class BudgetProvider {
public:
    virtual ~BudgetProvider() = default;
    virtual std::string name() const = 0;
    virtual std::optional<std::uint64_t> budget() = 0;
};

class FlagBudget : public BudgetProvider {
public:
    explicit FlagBudget(std::optional<std::string> value) : value_(std::move(value)) {}
    std::string name() const override { return "flag"; }
    std::optional<std::uint64_t> budget() override;

private:
    std::optional<std::string> value_;
};

class EnvBudget : public BudgetProvider {
public:
    explicit EnvBudget(std::string variable = kBudgetEnvVar) : variable_(std::move(variable)) {}
    std::string name() const override { return "env"; }
    std::optional<std::uint64_t> budget() override;

private:
    std::string variable_;
};

// Reads "memory_budget" (size string or integer bytes) from a JSON config file.
class ConfigFileBudget : public BudgetProvider {
public:
    explicit ConfigFileBudget(std::optional<std::filesystem::path> path) : path_(std::move(path)) {}
    std::string name() const override { return "config"; }
    std::optional<std::uint64_t> budget() override;

private:
    std::optional<std::filesystem::path> path_;
};

// Free memory of the selected device.
class ProbeBudget : public BudgetProvider {
public:
    explicit ProbeBudget(std::shared_ptr<DeviceProbe> probe) : probe_(std::move(probe)) {}
    std::string name() const override { return "probe"; }
    std::optional<std::uint64_t> budget() override;

private:
    std::shared_ptr<DeviceProbe> probe_;
};

struct ResolvedBudget {
    std::uint64_t bytes = 0;
    std::string source;
};

// First provider (in the given priority order) that yields a value wins.
// Throws Errc::no_budget when none does.
ResolvedBudget resolve_budget(std::span<const std::unique_ptr<BudgetProvider>> providers);

struct RetryPolicy {
    bool wait = false;
    std::chrono::milliseconds interval{1000};
    std::chrono::milliseconds timeout{300000};
};

// Re-resolves the budget and re-plans while the result is insufficient_memory,
// sleeping `policy.interval` between attempts until `policy.timeout` elapses.
QuantPlan plan_with_retry(const std::function<std::uint64_t()>& budget, std::span<const std::size_t> ranked,
                          const ModelProfile& profile, const RetryPolicy& policy,
                          const std::function<void(std::chrono::milliseconds)>& sleep);

}  // namespace lsaq
