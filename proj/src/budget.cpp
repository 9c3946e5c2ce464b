#include "lsaq/budget.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lsaq/error.hpp"
#include "lsaq/tensor_store.hpp"

namespace lsaq {

namespace {

struct Unit {
    std::string_view suffix;
    std::uint64_t multiplier;
};

constexpr Unit kUnits[] = {
    {"", 1},
    {"b", 1},
    {"kb", 1000ull},
    {"mb", 1000ull * 1000},
    {"gb", 1000ull * 1000 * 1000},
    {"tb", 1000ull * 1000 * 1000 * 1000},
    {"kib", 1ull << 10},
    {"mib", 1ull << 20},
    {"gib", 1ull << 30},
    {"tib", 1ull << 40},
};

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

}  // namespace

const DeviceReport& select_device(std::span<const DeviceReport> reports) {
    if (reports.empty()) throw Error(Errc::invalid_argument, "no devices reported");
    const DeviceReport* best = &reports.front();
    for (const auto& r : reports.subspan(1)) {
        if (r.free_bytes > best->free_bytes || (r.free_bytes == best->free_bytes && r.device_id < best->device_id)) {
            best = &r;
        }
    }
    return *best;
}

std::uint64_t parse_size(std::string_view text) {
    const std::string_view raw = trim(text);
    std::size_t pos = 0;
    while (pos < raw.size() && std::isdigit(static_cast<unsigned char>(raw[pos]))) ++pos;
    const std::string_view whole = raw.substr(0, pos);
    std::string_view fraction;
    if (pos < raw.size() && raw[pos] == '.') {
        const std::size_t start = ++pos;
        while (pos < raw.size() && std::isdigit(static_cast<unsigned char>(raw[pos]))) ++pos;
        fraction = raw.substr(start, pos - start);
    }
    if (whole.empty() && fraction.empty()) throw Error(Errc::bad_unit, "'" + std::string(text) + "'");

    const std::string unit = lower(trim(raw.substr(pos)));
    const auto* match = std::find_if(std::begin(kUnits), std::end(kUnits),
                                     [&](const Unit& u) { return u.suffix == unit; });
    if (match == std::end(kUnits)) throw Error(Errc::bad_unit, "unknown unit in '" + std::string(text) + "'");

    using u128 = unsigned __int128;
    u128 value = 0;
    for (char c : whole) {
        value = value * 10 + static_cast<unsigned>(c - '0');
        if (value > std::numeric_limits<std::uint64_t>::max()) throw Error(Errc::bad_unit, "size overflows");
    }
    value *= match->multiplier;
    u128 frac_num = 0;
    u128 frac_den = 1;
    for (char c : fraction.substr(0, 18)) {
        frac_num = frac_num * 10 + static_cast<unsigned>(c - '0');
        frac_den *= 10;
    }
    value += frac_num * match->multiplier / frac_den;
    if (value > std::numeric_limits<std::uint64_t>::max()) throw Error(Errc::bad_unit, "size overflows");
    return static_cast<std::uint64_t>(value);
}

std::vector<DeviceReport> parse_device_fixture(std::string_view json_text) {
    std::vector<DeviceReport> out;
    try {
        const auto j = nlohmann::json::parse(json_text);
        for (const auto& d : j) {
            out.push_back({d.at("device_id").get<std::string>(), d.at("free_bytes").get<std::uint64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::bad_header, std::string("device fixture: ") + e.what());
    }
    return out;
}

std::vector<DeviceReport> FileDeviceProbe::devices() { return parse_device_fixture(read_text_file(path_)); }

std::vector<DeviceReport> NvidiaSmiProbe::devices() {
    std::vector<DeviceReport> out;
    FILE* pipe = ::popen("nvidia-smi --query-gpu=index,memory.free --format=csv,noheader,nounits 2>/dev/null", "r");
    if (!pipe) return out;
    char line[256];
    while (std::fgets(line, sizeof line, pipe)) {
        unsigned index = 0;
        unsigned long long free_mib = 0;
        if (std::sscanf(line, "%u , %llu", &index, &free_mib) == 2) {
            out.push_back({"cuda:" + std::to_string(index), free_mib << 20});
        }
    }
    if (::pclose(pipe) != 0) out.clear();
    return out;
}

std::optional<std::uint64_t> FlagBudget::budget() {
    if (!value_) return std::nullopt;
    return parse_size(*value_);
}

std::optional<std::uint64_t> EnvBudget::budget() {
    const char* value = std::getenv(variable_.c_str());
    if (!value || trim(value).empty()) return std::nullopt;
    return parse_size(value);
}

std::optional<std::uint64_t> ConfigFileBudget::budget() {
    if (!path_ || !std::filesystem::exists(*path_)) return std::nullopt;
    try {
        const auto j = nlohmann::json::parse(read_text_file(*path_));
        if (!j.contains("memory_budget")) return std::nullopt;
        const auto& v = j["memory_budget"];
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        return parse_size(v.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::bad_header, std::string("config: ") + e.what());
    }
}

std::optional<std::uint64_t> ProbeBudget::budget() {
    if (!probe_) return std::nullopt;
    const auto devices = probe_->devices();
    if (devices.empty()) return std::nullopt;
    return select_device(devices).free_bytes;
}

ResolvedBudget resolve_budget(std::span<const std::unique_ptr<BudgetProvider>> providers) {
    for (const auto& provider : providers) {
        if (auto bytes = provider->budget()) return {*bytes, provider->name()};
    }
    throw Error(Errc::no_budget, "no flag, environment, config or probe value available");
}

QuantPlan plan_with_retry(const std::function<std::uint64_t()>& budget, std::span<const std::size_t> ranked,
                          const ModelProfile& profile, const RetryPolicy& policy,
                          const std::function<void(std::chrono::milliseconds)>& sleep) {
    std::chrono::milliseconds waited{0};
    for (;;) {
        try {
            return allocate_precision(ranked, profile, budget());
        } catch (const Error& e) {
            if (e.code() != Errc::insufficient_memory || !policy.wait || waited + policy.interval > policy.timeout) {
                throw;
            }
        }
        sleep(policy.interval);
        waited += policy.interval;
    }
}

}  // namespace lsaq
