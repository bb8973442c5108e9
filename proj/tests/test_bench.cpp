// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include "spattn/bench.hpp"
#include "spattn/errors.hpp"

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

using namespace spattn;

namespace {

BenchConfig small_config() {
    BenchConfig cfg;
    cfg.num_heads = 4;
    cfg.d_k = 8;
    cfg.batch = 2;
    cfg.repeats = 5;
    cfg.seed = 99;
    return cfg;
}

std::vector<std::string> data_lines(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

} // namespace

TEST_CASE("default grid pairs standard and spa at each length") {
    const auto grid = default_bench_grid();
    REQUIRE(grid.size() == 8);
    const int lengths[4] = {512, 1024, 2048, 4096};
    for (int i = 0; i < 4; ++i) {
        CHECK(grid[2 * i].variant == MaskVariant::standard());
        CHECK(grid[2 * i].seq_len == lengths[i]);
        CHECK(grid[2 * i + 1].variant == MaskVariant::spa());
        CHECK(grid[2 * i + 1].seq_len == lengths[i]);
    }
}

TEST_CASE("run_bench fills every field and the standard speedup is exactly one") {
    const BenchConfig cfg = small_config();
    const std::vector<BenchEntry> grid = {
        {MaskVariant::standard(), 48}, {MaskVariant::spa(), 48}, {MaskVariant::sliding_window(), 48}};
    const auto results = run_bench(grid, cfg);
    REQUIRE(results.size() == 3);
    for (const auto& r : results) {
        CHECK(!r.skipped);
        CHECK(r.seq_len == 48);
        CHECK(r.num_heads == 4);
        CHECK(r.d_k == 8);
        CHECK(r.batch == 2);
        CHECK(r.repeats == 5);
        CHECK(r.median_s > 0.0);
        CHECK(r.mean_s > 0.0);
        CHECK(r.p95_s >= r.median_s);
        CHECK(r.tokens_per_sec == 2.0 * 48 / r.median_s);
        CHECK(r.note.empty());
    }
    CHECK(results[0].variant == MaskVariant::standard());
    CHECK(results[0].speedup_vs_standard == 1.0);
    CHECK(results[1].speedup_vs_standard == results[0].median_s / results[1].median_s);
    CHECK(results[2].speedup_vs_standard > 0.0);
}

TEST_CASE("repeats follow the auto schedule and the forced floor") {
    BenchConfig cfg = small_config();
    SUBCASE("auto repeats scale down with N") {
        cfg.repeats = 0;
        const auto results = run_bench({{MaskVariant::spa(), 48}}, cfg);
        CHECK(results[0].repeats == 8192 / 48);
    }
    SUBCASE("forced repeats below five are raised to five") {
        cfg.repeats = 2;
        const auto results = run_bench({{MaskVariant::spa(), 48}}, cfg);
        CHECK(results[0].repeats == 5);
    }
}

TEST_CASE("grid without a standard row reports no baseline") {
    const BenchConfig cfg = small_config();
    const auto results = run_bench({{MaskVariant::spa(), 32}}, cfg);
    REQUIRE(results.size() == 1);
    CHECK(results[0].speedup_vs_standard == 0.0);
    CHECK(results[0].note == "no standard baseline at this N");
}

TEST_CASE("workload checksum is reproducible and keyed by config") {
    const BenchConfig cfg = small_config();
    CHECK(bench_workload_checksum(cfg, 32) == bench_workload_checksum(cfg, 32));
    CHECK(bench_workload_checksum(cfg, 32) != bench_workload_checksum(cfg, 48));
    BenchConfig other = cfg;
    other.seed = 100;
    CHECK(bench_workload_checksum(cfg, 32) != bench_workload_checksum(other, 32));
    BenchConfig wider = cfg;
    wider.d_k = 16;
    CHECK(bench_workload_checksum(cfg, 32) != bench_workload_checksum(wider, 32));
}

TEST_CASE("csv has the pinned column header and one row per measured entry") {
    const BenchConfig cfg = small_config();
    const std::vector<BenchEntry> grid = {{MaskVariant::standard(), 32}, {MaskVariant::spa(), 32}};
    const auto results = run_bench(grid, cfg);
    const std::string csv = bench_csv(results, cfg);

    CHECK(csv.find("# workload N=32 checksum=0x") != std::string::npos);
    CHECK(csv.find("steady-state CPU frequency") != std::string::npos);
    const auto lines = data_lines(csv);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "variant,N,H,d_k,batch,repeats,median_s,mean_s,p95_s,tokens_per_sec,speedup");
    CHECK(lines[1].rfind("standard,32,4,8,2,5,", 0) == 0);
    CHECK(lines[2].rfind("spa,32,4,8,2,5,", 0) == 0);
    // The configuration columns are the deterministic projection of the row:
    // exactly six commas separate them from the five timing fields.
    for (std::size_t i = 1; i < lines.size(); ++i) {
        CHECK(std::count(lines[i].begin(), lines[i].end(), ',') == 10);
    }
}

TEST_CASE("json report parses, echoes the config, and contains no timestamp") {
    const BenchConfig cfg = small_config();
    const auto results = run_bench({{MaskVariant::standard(), 32}, {MaskVariant::spa(), 32}}, cfg);
    const std::string text = bench_json(results, cfg);
    const auto j = nlohmann::json::parse(text);
    CHECK(j["bench"]["num_heads"] == 4);
    CHECK(j["bench"]["d_model"] == 32);
    CHECK(j["bench"]["seed"] == 99);
    REQUIRE(j["bench"]["results"].size() == 2);
    CHECK(j["bench"]["results"][0]["variant"] == "standard");
    CHECK(j["bench"]["results"][0]["speedup_vs_standard"] == 1.0);
    CHECK(j["bench"]["results"][1]["variant"] == "spa");
    CHECK(j["bench"]["workloads"].size() == 1);
    CHECK(text.find("timestamp") == std::string::npos);
}

TEST_CASE("two runs agree on every deterministic field") {
    const BenchConfig cfg = small_config();
    const std::vector<BenchEntry> grid = {{MaskVariant::standard(), 24}, {MaskVariant::spa(), 24},
                                          {MaskVariant::eball(), 24}};
    const auto a = run_bench(grid, cfg);
    const auto b = run_bench(grid, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].variant == b[i].variant);
        CHECK(a[i].seq_len == b[i].seq_len);
        CHECK(a[i].num_heads == b[i].num_heads);
        CHECK(a[i].d_k == b[i].d_k);
        CHECK(a[i].batch == b[i].batch);
        CHECK(a[i].repeats == b[i].repeats);
        CHECK(a[i].skipped == b[i].skipped);
        CHECK(a[i].note == b[i].note);
    }
    CHECK(bench_workload_checksum(cfg, 24) == bench_workload_checksum(cfg, 24));
}

TEST_CASE("invalid dimensions are rejected up front") {
    const BenchConfig cfg = small_config();
    CHECK_THROWS_AS(run_bench({{MaskVariant::spa(), 2}}, cfg), ShapeError);
    BenchConfig bad = cfg;
    bad.batch = 0;
    CHECK_THROWS_AS(run_bench({{MaskVariant::spa(), 32}}, bad), ShapeError);
    BenchConfig negative = cfg;
    negative.repeats = -1;
    CHECK_THROWS_AS(run_bench({{MaskVariant::spa(), 32}}, negative), ShapeError);
    CHECK_THROWS_AS(bench_workload_checksum(bad, 32), ShapeError);
}
