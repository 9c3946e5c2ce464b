#include <cstdlib>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lsaq/budget.hpp"
#include "lsaq/error.hpp"
#include "lsaq/planner.hpp"
#include "lsaq/tensor_store.hpp"
#include "test_util.hpp"

#ifndef LSAQ_PROFILE_DIR
#error "LSAQ_PROFILE_DIR must point at the shipped profiles"
#endif

using namespace lsaq;

namespace {

ModelProfile shipped(const std::string& file) {
    return profile_from_json(read_text_file(std::filesystem::path(LSAQ_PROFILE_DIR) / file));
}

std::vector<std::size_t> identity_ranking(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

PrecisionAssignment mix(std::size_t fp16, std::size_t int8, std::size_t int4) {
    PrecisionAssignment a(fp16, Precision::fp16);
    a.insert(a.end(), int8, Precision::int8);
    a.insert(a.end(), int4, Precision::int4);
    return a;
}

Errc error_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return Errc::invalid_argument;
}

using lsaq::test::ScopedEnv;

class FixedProbe : public DeviceProbe {
public:
    explicit FixedProbe(std::vector<DeviceReport> devices) : devices_(std::move(devices)) {}
    std::vector<DeviceReport> devices() override { return devices_; }

private:
    std::vector<DeviceReport> devices_;
};

}  // namespace

TEST(LayerBytes, Arithmetic) {
    ModelProfile p;
    p.num_layers = 1;
    p.layer_param_count = 1000;
    EXPECT_EQ(layer_bytes(p, Precision::fp16), 2000u);
    EXPECT_EQ(layer_bytes(p, Precision::int8), 1000u);
    EXPECT_EQ(layer_bytes(p, Precision::int4), 500u);
    p.scale_rows_per_layer = 10;
    EXPECT_EQ(layer_bytes(p, Precision::int8), 1040u);
    p.layer_param_count = 1001;
    EXPECT_EQ(layer_bytes(p, Precision::int4), 501u + 40u);
}

TEST(EstimateTotal, SumsLayersFixedAndHeadroom) {
    ModelProfile p;
    p.num_layers = 3;
    p.layer_param_count = 100;
    EXPECT_EQ(estimate_total(p, mix(3, 0, 0)), 600u);
    p.fixed_param_count = 7;
    p.headroom_bytes = 5;
    p.scale_rows_per_layer = 2;
    EXPECT_EQ(estimate_total(p, mix(1, 1, 1)), 200u + 108u + 58u + 14u + 5u);
    EXPECT_EQ(error_of([&] { estimate_total(p, mix(1, 1, 0)); }), Errc::invalid_argument);
}

TEST(EstimateTotal, MatchesNaiveSummationOnRandomAssignments) {
    const auto p = shipped("llama2-7b.json");
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        PrecisionAssignment a(p.num_layers);
        long double naive = 2.0L * p.fixed_param_count + p.headroom_bytes;
        for (auto& x : a) {
            x = static_cast<Precision>(rng() % 3);
            const long double params = p.layer_param_count;
            const long double scales = 4.0L * p.scale_rows_per_layer;
            naive += x == Precision::fp16 ? 2 * params : x == Precision::int8 ? params + scales : params / 2 + scales;
        }
        EXPECT_EQ(static_cast<long double>(estimate_total(p, a)), naive);
    }
}

TEST(AverageBits, TableValues) {
    EXPECT_EQ(average_bits(mix(32, 0, 0)), 16.0);
    EXPECT_EQ(average_bits(mix(0, 22, 10)), 6.75);
    EXPECT_EQ(average_bits(mix(0, 1, 31)), 4.125);
}

TEST(Profile, SevenBFitMatchesMemoryFigure) {
    const auto p = shipped("llama2-7b.json");
    const std::uint64_t fixed = 2 * p.fixed_param_count;
    const std::uint64_t fp16 = p.num_layers * layer_bytes(p, Precision::fp16) + fixed;
    const std::uint64_t int4 = p.num_layers * layer_bytes(p, Precision::int4) + fixed;
    EXPECT_NEAR(fp16 / 1e9, 12.82, 0.005);
    EXPECT_NEAR(int4 / 1e9, 3.56, 0.005);

    // Re-solve the two linear constraints from scratch and compare.
    const double scale_bytes = 4.0 * p.scale_rows_per_layer;
    const double solved_params = ((12.82e9 - 3.56e9) / p.num_layers + scale_bytes) / 1.5;
    const double solved_fixed = (12.82e9 - 2.0 * p.num_layers * solved_params) / 2.0;
    EXPECT_NEAR(static_cast<double>(p.layer_param_count), solved_params, 2.0);
    EXPECT_NEAR(static_cast<double>(p.fixed_param_count), solved_fixed, 64.0);
}

TEST(Profile, OtherShippedFits) {
    struct Target {
        const char* file;
        double fp16_gb;
        double int4_gb;
    };
    for (const auto& t : {Target{"llama2-13b.json", 24.36, 6.79}, Target{"llama3-8b.json", 15.14, 5.18}}) {
        const auto p = shipped(t.file);
        const std::uint64_t fixed = 2 * p.fixed_param_count;
        EXPECT_NEAR((p.num_layers * layer_bytes(p, Precision::fp16) + fixed) / 1e9, t.fp16_gb, 0.005) << t.file;
        EXPECT_NEAR((p.num_layers * layer_bytes(p, Precision::int4) + fixed) / 1e9, t.int4_gb, 0.005) << t.file;
    }
}

TEST(Profile, JsonRoundTrip) {
    const auto p = shipped("llama2-7b.json");
    const auto back = profile_from_json(profile_to_json(p));
    EXPECT_EQ(back.layer_param_count, p.layer_param_count);
    EXPECT_EQ(back.headroom_bytes, p.headroom_bytes);
    EXPECT_EQ(error_of([] { profile_from_json("{\"num_layers\": 0, \"layer_param_count\": 1, \"fixed_param_count\": 1}"); }),
              Errc::invalid_argument);
    EXPECT_EQ(error_of([] { profile_from_json("{}"); }), Errc::bad_header);
}

TEST(Allocate, SevenBStrategyTable) {
    const auto p = shipped("llama2-7b.json");
    const auto ranked = identity_ranking(32);
    struct Row {
        std::uint64_t budget;
        PrecisionCounts counts;
        double bits;
    };
    const Row rows[] = {
        {16'000'000'000, {32, 0, 0}, 16.0}, {12'000'000'000, {0, 32, 0}, 8.0}, {8'000'000'000, {0, 32, 0}, 8.0},
        {6'000'000'000, {0, 22, 10}, 6.75}, {4'000'000'000, {0, 1, 31}, 4.125},
    };
    for (const auto& row : rows) {
        const auto plan = allocate_precision(ranked, p, row.budget);
        EXPECT_EQ(plan.counts(), row.counts) << row.budget;
        EXPECT_EQ(plan.average_bits, row.bits);
        EXPECT_LE(plan.predicted_bytes, plan.budget_bytes);
    }
}

TEST(Allocate, Int4GoesToLeastImportantLayers) {
    const auto p = shipped("llama2-7b.json");
    std::vector<std::size_t> ranked = identity_ranking(32);
    std::mt19937_64 rng(2);
    std::shuffle(ranked.begin(), ranked.end(), rng);
    const auto plan = allocate_precision(ranked, p, 6'000'000'000);
    for (std::size_t i = 0; i < 32; ++i) {
        EXPECT_EQ(plan.assignment[ranked[i]], i < 10 ? Precision::int4 : Precision::int8);
    }
    EXPECT_EQ(plan.ordering_used, ranked);
}

TEST(Allocate, InsufficientMemoryAndBadRanking) {
    const auto p = shipped("llama2-7b.json");
    EXPECT_EQ(error_of([&] { allocate_precision(identity_ranking(32), p, 1'000'000'000); }), Errc::insufficient_memory);
    EXPECT_EQ(error_of([&] { allocate_precision(identity_ranking(31), p, 16'000'000'000); }), Errc::invalid_argument);
    auto dup = identity_ranking(32);
    dup[5] = 4;
    EXPECT_EQ(error_of([&] { allocate_precision(dup, p, 16'000'000'000); }), Errc::invalid_argument);
}

TEST(Allocate, ExactThresholds) {
    ModelProfile p;
    p.num_layers = 4;
    p.layer_param_count = 100;
    const auto ranked = identity_ranking(4);
    EXPECT_EQ(allocate_precision(ranked, p, 800).counts(), (PrecisionCounts{4, 0, 0}));
    EXPECT_EQ(allocate_precision(ranked, p, 799).counts(), (PrecisionCounts{0, 4, 0}));
    EXPECT_EQ(allocate_precision(ranked, p, 400).counts(), (PrecisionCounts{0, 4, 0}));
    EXPECT_EQ(allocate_precision(ranked, p, 399).counts(), (PrecisionCounts{0, 3, 1}));
    EXPECT_EQ(allocate_precision(ranked, p, 200).counts(), (PrecisionCounts{0, 0, 4}));
    EXPECT_EQ(error_of([&] { allocate_precision(ranked, p, 199); }), Errc::insufficient_memory);
}

TEST(Plan, JsonRoundTripAndId) {
    const auto p = shipped("llama2-7b.json");
    const auto plan = allocate_precision(identity_ranking(32), p, 6'000'000'000);
    const auto text = plan_to_json(plan);
    const auto back = plan_from_json(text);
    EXPECT_EQ(back.assignment, plan.assignment);
    EXPECT_EQ(back.predicted_bytes, plan.predicted_bytes);
    EXPECT_EQ(plan_id(back), plan_id(plan));
    EXPECT_EQ(plan_id(plan).size(), 16u);
    EXPECT_NE(plan_id(plan), plan_id(allocate_precision(identity_ranking(32), p, 4'000'000'000)));
    EXPECT_NE(text.find("\"model_id\": \"llama-2-7b\""), std::string::npos);
}

TEST(StrategyTable, Renders) {
    const auto p = shipped("llama2-7b.json");
    std::vector<QuantPlan> plans;
    for (std::uint64_t gb : {16, 6}) plans.push_back(allocate_precision(identity_ranking(32), p, gb * 1'000'000'000));
    const auto table = format_strategy_table(plans);
    EXPECT_NE(table.find("16.00GB"), std::string::npos);
    EXPECT_NE(table.find("6.75"), std::string::npos);
}

TEST(SelectDevice, Examples) {
    const std::vector<DeviceReport> two = {{"a", 5}, {"b", 9}};
    EXPECT_EQ(select_device(two).device_id, "b");
    const std::vector<DeviceReport> tie = {{"b", 5}, {"a", 5}};
    EXPECT_EQ(select_device(tie).device_id, "a");
    const std::vector<DeviceReport> one = {{"solo", 0}};
    EXPECT_EQ(select_device(one).device_id, "solo");
    EXPECT_EQ(error_of([] { select_device({}); }), Errc::invalid_argument);
}

TEST(ParseSize, Units) {
    EXPECT_EQ(parse_size("6GB"), 6'000'000'000u);
    EXPECT_EQ(parse_size("8GiB"), 8ull << 30);
    EXPECT_EQ(parse_size("512"), 512u);
    EXPECT_EQ(parse_size("512B"), 512u);
    EXPECT_EQ(parse_size("3 MiB"), 3u << 20);
    EXPECT_EQ(parse_size("1.5GB"), 1'500'000'000u);
    EXPECT_EQ(parse_size("2kb"), 2000u);
    EXPECT_EQ(error_of([] { parse_size("6G"); }), Errc::bad_unit);
    EXPECT_EQ(error_of([] { parse_size("GB"); }), Errc::bad_unit);
    EXPECT_EQ(error_of([] { parse_size("lots"); }), Errc::bad_unit);
    EXPECT_EQ(error_of([] { parse_size("99999999999TB"); }), Errc::bad_unit);
}

TEST(ResolveBudget, PriorityOrder) {
    const auto dir = lsaq::test::scratch_dir();
    write_text_file(dir / "config.json", R"({"memory_budget": "4GB"})");
    auto probe = std::make_shared<FixedProbe>(std::vector<DeviceReport>{{"gpu0", 111}, {"gpu1", 222}});

    auto resolve = [&](std::optional<std::string> flag, std::optional<std::filesystem::path> config,
                       std::shared_ptr<DeviceProbe> p) {
        std::vector<std::unique_ptr<BudgetProvider>> providers;
        providers.push_back(std::make_unique<FlagBudget>(flag));
        providers.push_back(std::make_unique<EnvBudget>());
        providers.push_back(std::make_unique<ConfigFileBudget>(config));
        providers.push_back(std::make_unique<ProbeBudget>(p));
        return resolve_budget(providers);
    };

    {
        ScopedEnv env(kBudgetEnvVar, "8GiB");
        EXPECT_EQ(resolve("6GB", dir / "config.json", probe).bytes, 6'000'000'000u);
        const auto r = resolve(std::nullopt, dir / "config.json", probe);
        EXPECT_EQ(r.bytes, 8ull << 30);
        EXPECT_EQ(r.source, "env");
    }
    {
        ScopedEnv env(kBudgetEnvVar, nullptr);
        EXPECT_EQ(resolve(std::nullopt, dir / "config.json", probe).bytes, 4'000'000'000u);
        const auto r = resolve(std::nullopt, std::nullopt, probe);
        EXPECT_EQ(r.bytes, 222u);
        EXPECT_EQ(r.source, "probe");
        auto empty = std::make_shared<FixedProbe>(std::vector<DeviceReport>{});
        EXPECT_EQ(error_of([&] { resolve(std::nullopt, std::nullopt, empty); }), Errc::no_budget);
        EXPECT_EQ(error_of([&] { resolve(std::nullopt, std::nullopt, nullptr); }), Errc::no_budget);
        EXPECT_EQ(error_of([&] { resolve("six", std::nullopt, probe); }), Errc::bad_unit);
    }
}

TEST(FileDeviceProbe, ReadsFixture) {
    const auto dir = lsaq::test::scratch_dir();
    write_text_file(dir / "devices.json", R"([{"device_id": "cuda:0", "free_bytes": 5}, {"device_id": "cuda:1", "free_bytes": 9}])");
    FileDeviceProbe probe(dir / "devices.json");
    const auto devices = probe.devices();
    ASSERT_EQ(devices.size(), 2u);
    EXPECT_EQ(select_device(devices).device_id, "cuda:1");
    write_text_file(dir / "bad.json", R"([{"id": 1}])");
    EXPECT_THROW(FileDeviceProbe(dir / "bad.json").devices(), Error);
}

TEST(PlanWithRetry, WaitsForMemory) {
    const auto p = shipped("llama2-7b.json");
    const auto ranked = identity_ranking(32);
    std::vector<std::uint64_t> budgets = {1'000'000'000, 2'000'000'000, 6'000'000'000};
    std::size_t calls = 0;
    std::vector<std::chrono::milliseconds> slept;
    RetryPolicy policy;
    policy.wait = true;
    policy.timeout = std::chrono::seconds(10);
    const auto plan = plan_with_retry([&] { return budgets[std::min(calls++, budgets.size() - 1)]; }, ranked, p, policy,
                                      [&](std::chrono::milliseconds d) { slept.push_back(d); });
    EXPECT_EQ(plan.counts(), (PrecisionCounts{0, 22, 10}));
    EXPECT_EQ(slept.size(), 2u);
    EXPECT_EQ(slept[0], std::chrono::milliseconds(1000));
}

TEST(PlanWithRetry, GivesUpAfterTimeoutOrWithoutWait) {
    const auto p = shipped("llama2-7b.json");
    const auto ranked = identity_ranking(32);
    int sleeps = 0;
    RetryPolicy policy;
    policy.wait = true;
    policy.timeout = std::chrono::seconds(3);
    EXPECT_EQ(error_of([&] {
                  plan_with_retry([] { return 1'000'000'000ull; }, ranked, p, policy,
                                  [&](std::chrono::milliseconds) { ++sleeps; });
              }),
              Errc::insufficient_memory);
    EXPECT_EQ(sleeps, 3);

    policy.wait = false;
    sleeps = 0;
    EXPECT_EQ(error_of([&] {
                  plan_with_retry([] { return 1'000'000'000ull; }, ranked, p, policy,
                                  [&](std::chrono::milliseconds) { ++sleeps; });
              }),
              Errc::insufficient_memory);
    EXPECT_EQ(sleeps, 0);
}
