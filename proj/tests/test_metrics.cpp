// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <json.hpp>

#include "spattn/attention.hpp"
#include "spattn/metrics.hpp"
#include "spattn/rng.hpp"

#include <cmath>
#include <random>
#include <set>

using namespace spattn;

namespace {

template <typename T>
Tensor<T> random_heads(const AttentionConfig& cfg, std::mt19937_64& gen) {
    Tensor<T> t({cfg.num_heads, cfg.seq_len, cfg.d_k()});
    fill_normal(std::span<T>(t.data), gen);
    return t;
}

AttentionConfig make_cfg(int n, int h, int d_k, MaskVariant v = MaskVariant::spa()) {
    AttentionConfig cfg;
    cfg.seq_len = n;
    cfg.num_heads = h;
    cfg.d_model = h * d_k;
    cfg.variant = v;
    return cfg;
}

std::vector<HeadProbs<double>> probs_for(const AttentionConfig& cfg, std::mt19937_64& gen,
                                         bool zero_queries = false) {
    const auto masks = build_mask(compute_partition(cfg.seq_len, cfg.num_heads), cfg.variant);
    auto q = random_heads<double>(cfg, gen);
    if (zero_queries) {
        std::fill(q.data.begin(), q.data.end(), 0.0);
    }
    const auto k = random_heads<double>(cfg, gen);
    const auto v = random_heads<double>(cfg, gen);
    return masked_dense_forward(q, k, v, masks, cfg, true).probs;
}

} // namespace

TEST_CASE("entropy ceilings from band widths") {
    const EntropyBound b = entropy_bound(compute_partition(1024, 8));
    REQUIRE(b.per_head.size() == 8);
    for (double x : b.per_head) {
        CHECK(x == doctest::Approx(4.852030263919617).epsilon(1e-15)); // ln 128
    }
    CHECK(b.global == doctest::Approx(4.852030263919617).epsilon(1e-15));

    const EntropyBound one = entropy_bound(compute_partition(64, 1));
    CHECK(one.per_head[0] == doctest::Approx(std::log(64.0)));

    // remainder heads are one wider, and the global bound follows them
    const EntropyBound odd = entropy_bound(compute_partition(10, 3));
    CHECK(odd.per_head[0] == doctest::Approx(std::log(4.0)));
    CHECK(odd.per_head[1] == doctest::Approx(std::log(3.0)));
    CHECK(odd.global == doctest::Approx(std::log(4.0)));
}

TEST_CASE("row entropies of hand-built distributions") {
    HeadProbs<double> hp;
    hp.support = {{0, 4}, {1, 3}, {0, 0}, {2, 3}};
    hp.offsets = {0, 4, 6, 6, 7};
    hp.packed = {0.25, 0.25, 0.25, 0.25, 1.0, 0.0, 1.0};
    const std::vector<double> e = row_entropies(hp);
    CHECK(e[0] == doctest::Approx(std::log(4.0)));
    CHECK(e[1] == doctest::Approx(0.0)); // one-hot, zero entry skipped
    CHECK(e[2] == -1.0);                 // empty row sentinel
    CHECK(e[3] == doctest::Approx(0.0));

    // empty rows are left out of the head mean
    const EntropyStats s = attention_entropy(std::vector<HeadProbs<double>>{hp});
    CHECK(s.per_head[0] == doctest::Approx(std::log(4.0) / 3.0));

    HeadProbs<double> bad = hp;
    bad.packed[0] = -0.1;
    CHECK_THROWS_AS(row_entropies(bad), NumericError);
}

TEST_CASE("uniform attention saturates the band-width bound") {
    const AttentionConfig cfg = make_cfg(256, 4, 4);
    std::mt19937_64 gen(21);
    const auto probs = probs_for(cfg, gen, true); // zero queries -> uniform rows
    const BandPartition p = compute_partition(256, 4);
    const EntropyBound bound = entropy_bound(p);
    const EntropyStats stats = attention_entropy(probs);
    for (int h = 0; h < 4; ++h) {
        CHECK(stats.per_head[h] <= bound.per_head[h] + 1e-9);
        // full-support rows hit the bound exactly
        const std::vector<double> rows = row_entropies(probs[h]);
        double mx = 0;
        for (double e : rows) {
            mx = std::max(mx, e);
        }
        CHECK(mx == doctest::Approx(bound.per_head[h]).epsilon(1e-12));
    }
}

TEST_CASE("random attention stays below per-head and per-query bounds") {
    std::mt19937_64 gen(22);
    for (int trial = 0; trial < 10; ++trial) {
        const int h = 1 << uniform_int(gen, 0, 3);
        const int n = uniform_int(gen, h, 96);
        const AttentionConfig cfg = make_cfg(n, h, 4);
        const auto probs = probs_for(cfg, gen);
        const EntropyBound bound = entropy_bound(compute_partition(n, h));
        const EntropyStats stats = attention_entropy(probs);
        for (int i = 0; i < h; ++i) {
            CHECK(stats.per_head[i] <= bound.per_head[i] + 1e-9);
        }
    }

    // full causal attention obeys the prefix-size bound per query
    const AttentionConfig cfg = make_cfg(64, 2, 4, MaskVariant::standard());
    const auto probs = probs_for(cfg, gen);
    for (const auto& hp : probs) {
        const std::vector<double> rows = row_entropies(hp);
        for (int i = 0; i < 64; ++i) {
            CHECK(rows[static_cast<std::size_t>(i)] <= std::log(i + 1.0) + 1e-9);
        }
    }
}

TEST_CASE("diversity is zero for identical heads and one for disjoint bands") {
    const AttentionConfig std_cfg = make_cfg(32, 4, 4, MaskVariant::standard());
    std::mt19937_64 gen(23);
    // same per-head Q and K -> identical distributions in every head
    Tensor<double> q({4, 32, 4}), k({4, 32, 4}), v({4, 32, 4});
    Tensor<double> q1({1, 32, 4}), k1({1, 32, 4});
    fill_normal(std::span<double>(q1.data), gen);
    fill_normal(std::span<double>(k1.data), gen);
    fill_normal(std::span<double>(v.data), gen);
    for (int h = 0; h < 4; ++h) {
        std::copy(q1.data.begin(), q1.data.end(), q.data.begin() + h * 32 * 4);
        std::copy(k1.data.begin(), k1.data.end(), k.data.begin() + h * 32 * 4);
    }
    const auto masks = build_mask(compute_partition(32, 4), MaskVariant::standard());
    const auto same = masked_dense_forward(q, k, v, masks, std_cfg, true);
    CHECK(head_diversity(same.probs) == doctest::Approx(0.0));

    const AttentionConfig spa_cfg = make_cfg(32, 4, 4);
    const auto spa = probs_for(spa_cfg, gen);
    CHECK(head_diversity(spa) == doctest::Approx(1.0).epsilon(1e-12));

    // band-partitioned heads are never less diverse than full causal heads
    const auto std_probs = probs_for(std_cfg, gen);
    CHECK(head_diversity(spa) >= head_diversity(std_probs));

    CHECK(head_diversity(std::vector<HeadProbs<double>>{same.probs[0]}) == 0.0);
}

TEST_CASE("support overlap matrix matches a set-based computation") {
    const BandPartition p = compute_partition(64, 4);
    const auto spa = build_mask(p, MaskVariant::spa());
    const auto j = support_overlap(spa);
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            CHECK(j[static_cast<std::size_t>(a) * 4 + b] == (a == b ? 1.0 : 0.0));
        }
    }

    const auto std_masks = build_mask(p, MaskVariant::standard());
    for (double x : support_overlap(std_masks)) {
        CHECK(x == 1.0);
    }
    for (double x : support_overlap(build_mask(p, MaskVariant::sliding_window()))) {
        CHECK(x == 1.0);
    }

    // brute-force pair sets for an unbalanced variant
    const auto eb = build_mask(eball_partition(64, 4), MaskVariant::eball());
    const auto je = support_overlap(eb);
    for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) {
            std::set<std::pair<int, int>> sa, sb;
            for (int i = 0; i < 64; ++i) {
                const auto& ia = eb[a].allowed[static_cast<std::size_t>(i)];
                for (int x = ia.begin; x < ia.end; ++x) {
                    sa.insert({i, x});
                }
                const auto& ib = eb[b].allowed[static_cast<std::size_t>(i)];
                for (int x = ib.begin; x < ib.end; ++x) {
                    sb.insert({i, x});
                }
            }
            std::set<std::pair<int, int>> inter, uni = sa;
            for (const auto& pr : sb) {
                if (sa.count(pr)) {
                    inter.insert(pr);
                }
                uni.insert(pr);
            }
            const double want =
                uni.empty() ? (a == b ? 1.0 : 0.0)
                            : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
            CHECK(je[static_cast<std::size_t>(a) * 4 + b] == doctest::Approx(want));
        }
    }
}

TEST_CASE("report serialization carries every field") {
    const AttentionConfig cfg = make_cfg(64, 4, 8);
    std::mt19937_64 gen(24);
    const auto masks = build_mask(compute_partition(64, 4), cfg.variant);
    const auto probs = probs_for(cfg, gen);
    const MetricsReport r = collect_metrics(cfg, masks, probs);

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["variant"] == "spa");
    CHECK(j["seq_len"] == 64);
    CHECK(j["per_head_entropy"].size() == 4);
    CHECK(j["entropy_bound"].size() == 4);
    CHECK(j["support_overlap"].size() == 16);
    CHECK(j["diversity_sigma"].get<double>() == doctest::Approx(1.0));
    CHECK(j["flops"]["allowed_pairs"] == 64 * 65 / 2);
    CHECK(j.contains("timestamp"));
    CHECK(j.contains("diversity_note"));

    const std::string csv = r.to_csv();
    CHECK(csv.starts_with("head,entropy,entropy_bound\n"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
