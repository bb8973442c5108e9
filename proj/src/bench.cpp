// SPDX-License-Identifier: Apache-2.0
#include "spattn/bench.hpp"

#include "spattn/attention.hpp"
#include "spattn/errors.hpp"
#include "spattn/rng.hpp"
#include "spattn/tape.hpp"
#include "spattn/tensor.hpp"

#include <json.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <new>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace spattn {
namespace {

int bench_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int auto_repeats(int seq_len) { return std::max(5, 8192 / seq_len); }

int repeats_for(const BenchConfig& cfg, int seq_len) {
    return cfg.repeats > 0 ? std::max(5, cfg.repeats) : auto_repeats(seq_len);
}

void check_config(const BenchConfig& cfg) {
    if (cfg.num_heads < 1 || cfg.d_k < 1 || cfg.batch < 1) {
        throw ShapeError("bench requires positive num_heads, d_k and batch");
    }
    if (cfg.repeats < 0) {
        throw ShapeError("bench repeats must be nonnegative");
    }
}

/// Buffers for one sequence length, shared by every variant at that N and
/// reused across repeats. The timed pass writes only into these.
struct Workload {
    int n, h, dk, d, batch, rows;
    Tensor<float> x, wq, wk, wv, wo, dout;
    Tensor<float> q2, k2, v2, y, out, dy2, dyb, dq2, dk2, dv2, dx;
    Tensor<float> wt, dwq, dwk, dwv, dwo;
    Tensor<float> q, k, v;
    std::vector<BandedSaved<float>> saved;
    double sink = 0; // keeps the gradient chain observable

    Workload(const BenchConfig& cfg, int seq_len)
        : n(seq_len), h(cfg.num_heads), dk(cfg.d_k), d(cfg.num_heads * cfg.d_k),
          batch(cfg.batch), rows(cfg.batch * seq_len),
          x({rows, d}), wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d}), dout({rows, d}),
          q2({rows, d}), k2({rows, d}), v2({rows, d}), y({rows, d}), out({rows, d}),
          dy2({rows, d}), dyb({n, d}), dq2({rows, d}), dk2({rows, d}), dv2({rows, d}),
          dx({rows, d}), wt({d, d}), dwq({d, d}), dwk({d, d}), dwv({d, d}), dwo({d, d}),
          q({h, n, dk}), k({h, n, dk}), v({h, n, dk}), saved(cfg.batch) {}

    void fill(std::uint64_t seed) {
        std::mt19937_64 gen = stream_for_step(seed, static_cast<std::uint64_t>(n));
        fill_normal(std::span<float>(x.data), gen);
        fill_normal(std::span<float>(wq.data), gen, 0.0f, 0.02f);
        fill_normal(std::span<float>(wk.data), gen, 0.0f, 0.02f);
        fill_normal(std::span<float>(wv.data), gen, 0.0f, 0.02f);
        fill_normal(std::span<float>(wo.data), gen, 0.0f, 0.02f);
        fill_normal(std::span<float>(dout.data), gen);
    }

    std::uint64_t checksum() const {
        std::uint64_t c = fnv1a(x.data.data(), x.data.size() * sizeof(float));
        c = fnv1a(wq.data.data(), wq.data.size() * sizeof(float), c);
        c = fnv1a(wk.data.data(), wk.data.size() * sizeof(float), c);
        c = fnv1a(wv.data.data(), wv.data.size() * sizeof(float), c);
        c = fnv1a(wo.data.data(), wo.data.size() * sizeof(float), c);
        c = fnv1a(dout.data.data(), dout.data.size() * sizeof(float), c);
        return c;
    }

    const float* item(const Tensor<float>& t, int b) const {
        return t.data.data() + static_cast<std::size_t>(b) * n * d;
    }
    float* item(Tensor<float>& t, int b) const {
        return t.data.data() + static_cast<std::size_t>(b) * n * d;
    }

    void pack(const Tensor<float>& src, int b, Tensor<float>& dst) const {
        const float* s = item(src, b);
        for (int hh = 0; hh < h; ++hh) {
            for (int i = 0; i < n; ++i) {
                std::copy_n(s + static_cast<std::size_t>(i) * d + hh * dk, dk,
                            dst.data.data() + (static_cast<std::size_t>(hh) * n + i) * dk);
            }
        }
    }

    void unpack(const Tensor<float>& src, Tensor<float>& dst, int b) const {
        float* t = item(dst, b);
        for (int hh = 0; hh < h; ++hh) {
            for (int i = 0; i < n; ++i) {
                std::copy_n(src.data.data() + (static_cast<std::size_t>(hh) * n + i) * dk, dk,
                            t + static_cast<std::size_t>(i) * d + hh * dk);
            }
        }
    }

    void transpose(const Tensor<float>& w) {
        for (int i = 0; i < d; ++i) {
            for (int j = 0; j < d; ++j) {
                wt.data[static_cast<std::size_t>(j) * d + i] =
                    w.data[static_cast<std::size_t>(i) * d + j];
            }
        }
    }

    void mm(const Tensor<float>& a, const Tensor<float>& b, Tensor<float>& c) {
        std::fill(c.data.begin(), c.data.end(), 0.0f);
        gemm_accum_nn(a.data.data(), b.data.data(), c.data.data(), rows, d, d);
    }

    /// One complete layer pass. The standard entry runs the dense reference
    /// kernels; every other variant runs the banded kernels. All surrounding
    /// work (projections, head packing, weight gradients) is shared code.
    void pass(const std::vector<HeadMask>& masks, const AttentionConfig& cfg) {
        const bool dense = cfg.variant.kind == MaskKind::Standard;
        mm(x, wq, q2);
        mm(x, wk, k2);
        mm(x, wv, v2);
        for (int b = 0; b < batch; ++b) {
            pack(q2, b, q);
            pack(k2, b, k);
            pack(v2, b, v);
            AttentionOutput<float> o;
            if (dense) {
                o = dense_mha_forward(q, k, v, cfg, true);
                saved[static_cast<std::size_t>(b)] =
                    BandedSaved<float>{std::move(o.probs), 0, true};
            } else {
                o = banded_forward(q, k, v, masks, cfg, &saved[static_cast<std::size_t>(b)]);
            }
            std::copy_n(o.output.data.data(), static_cast<std::size_t>(n) * d, item(y, b));
        }
        mm(y, wo, out);

        transpose(wo);
        mm(dout, wt, dy2);
        std::fill(dwo.data.begin(), dwo.data.end(), 0.0f);
        gemm_accum_tn(y.data.data(), dout.data.data(), dwo.data.data(), rows, d, d);
        for (int b = 0; b < batch; ++b) {
            pack(q2, b, q);
            pack(k2, b, k);
            pack(v2, b, v);
            std::copy_n(item(dy2, b), static_cast<std::size_t>(n) * d, dyb.data.data());
            BandedGrads<float> g =
                dense ? masked_dense_backward(dyb, q, k, v, masks, saved[static_cast<std::size_t>(b)], cfg)
                      : banded_backward(dyb, q, k, v, masks, saved[static_cast<std::size_t>(b)], cfg);
            unpack(g.dq, dq2, b);
            unpack(g.dk, dk2, b);
            unpack(g.dv, dv2, b);
        }
        transpose(wq);
        mm(dq2, wt, dx);
        transpose(wk);
        gemm_accum_nn(dk2.data.data(), wt.data.data(), dx.data.data(), rows, d, d);
        transpose(wv);
        gemm_accum_nn(dv2.data.data(), wt.data.data(), dx.data.data(), rows, d, d);
        std::fill(dwq.data.begin(), dwq.data.end(), 0.0f);
        std::fill(dwk.data.begin(), dwk.data.end(), 0.0f);
        std::fill(dwv.data.begin(), dwv.data.end(), 0.0f);
        gemm_accum_tn(x.data.data(), dq2.data.data(), dwq.data.data(), rows, d, d);
        gemm_accum_tn(x.data.data(), dk2.data.data(), dwk.data.data(), rows, d, d);
        gemm_accum_tn(x.data.data(), dv2.data.data(), dwv.data.data(), rows, d, d);
        sink += static_cast<double>(dx.data[0]) + static_cast<double>(dwq.data[0]);
    }
};

double quantile_sorted(const std::vector<double>& sorted, double f) {
    const auto r = static_cast<std::size_t>(std::ceil(f * static_cast<double>(sorted.size())));
    return sorted[std::min(sorted.size() - 1, r == 0 ? 0 : r - 1)];
}

std::string hex_checksum(std::uint64_t c) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(c));
    return buf;
}

/// Distinct sequence lengths in first-appearance order with their entry indices.
std::vector<std::pair<int, std::vector<std::size_t>>>
group_by_seq_len(const std::vector<BenchEntry>& grid) {
    std::vector<std::pair<int, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == grid[i].seq_len; });
        if (it == groups.end()) {
            groups.push_back({grid[i].seq_len, {i}});
        } else {
            it->second.push_back(i);
        }
    }
    return groups;
}

} // namespace

std::vector<BenchEntry> default_bench_grid() {
    std::vector<BenchEntry> grid;
    for (int n : {512, 1024, 2048, 4096}) {
        grid.push_back({MaskVariant::standard(), n});
        grid.push_back({MaskVariant::spa(), n});
    }
    return grid;
}

std::uint64_t bench_workload_checksum(const BenchConfig& cfg, int seq_len) {
    check_config(cfg);
    AttentionConfig ac{seq_len, cfg.num_heads, cfg.num_heads * cfg.d_k, MaskVariant::spa()};
    ac.validate();
    Workload w(cfg, seq_len);
    w.fill(cfg.seed);
    return w.checksum();
}

std::vector<BenchResult> run_bench(const std::vector<BenchEntry>& grid, const BenchConfig& cfg) {
    check_config(cfg);
    for (const BenchEntry& e : grid) {
        AttentionConfig ac{e.seq_len, cfg.num_heads, cfg.num_heads * cfg.d_k, e.variant};
        ac.validate();
    }

    std::vector<BenchResult> results(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        results[i].variant = grid[i].variant;
        results[i].seq_len = grid[i].seq_len;
        results[i].num_heads = cfg.num_heads;
        results[i].d_k = cfg.d_k;
        results[i].batch = cfg.batch;
        results[i].repeats = repeats_for(cfg, grid[i].seq_len);
    }

    using clock = std::chrono::steady_clock;
    for (const auto& [n, indices] : group_by_seq_len(grid)) {
        const int reps = repeats_for(cfg, n);
        std::unique_ptr<Workload> work;
        try {
            work = std::make_unique<Workload>(cfg, n);
            work->fill(cfg.seed);
        } catch (const std::bad_alloc&) {
            for (std::size_t i : indices) {
                results[i].skipped = true;
                results[i].note = "allocation failed for workload";
            }
            continue;
        }

        struct Live {
            std::size_t index;
            AttentionConfig cfg;
            std::vector<HeadMask> masks;
            std::vector<double> samples;
        };
        std::vector<Live> live;
        for (std::size_t i : indices) {
            Live entry{i,
                       {n, cfg.num_heads, cfg.num_heads * cfg.d_k, grid[i].variant},
                       build_mask(compute_partition(n, cfg.num_heads), grid[i].variant),
                       {}};
            entry.samples.reserve(static_cast<std::size_t>(reps));
            try {
                work->pass(entry.masks, entry.cfg);
                work->pass(entry.masks, entry.cfg);
            } catch (const std::bad_alloc&) {
                results[i].skipped = true;
                results[i].note = "allocation failed during warmup";
                continue;
            }
            live.push_back(std::move(entry));
        }

        for (int r = 0; r < reps; ++r) {
            for (Live& entry : live) {
                try {
                    const auto t0 = clock::now();
                    work->pass(entry.masks, entry.cfg);
                    const auto t1 = clock::now();
                    entry.samples.push_back(std::chrono::duration<double>(t1 - t0).count());
                } catch (const std::bad_alloc&) {
                    results[entry.index].skipped = true;
                    results[entry.index].note = "allocation failed during timing";
                }
            }
            live.erase(std::remove_if(live.begin(), live.end(),
                                      [&](const Live& e) { return results[e.index].skipped; }),
                       live.end());
        }

        double standard_median = 0;
        for (const Live& entry : live) {
            BenchResult& r = results[entry.index];
            std::vector<double> sorted = entry.samples;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t m = sorted.size();
            r.median_s = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
            r.mean_s = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(m);
            r.p95_s = quantile_sorted(sorted, 0.95);
            r.tokens_per_sec = static_cast<double>(cfg.batch) * n / r.median_s;
            if (!std::isfinite(work->sink)) {
                r.note = "pass produced nonfinite gradients";
            }
            if (grid[entry.index].variant.kind == MaskKind::Standard && standard_median == 0) {
                standard_median = r.median_s;
            }
        }
        for (const Live& entry : live) {
            BenchResult& r = results[entry.index];
            if (standard_median > 0) {
                r.speedup_vs_standard = standard_median / r.median_s;
            } else if (r.note.empty()) {
                r.note = "no standard baseline at this N";
            }
        }
    }
    return results;
}

std::string bench_csv(const std::vector<BenchResult>& results, const BenchConfig& cfg) {
    std::string s;
    s += "# attention layer forward+backward wall-clock benchmark\n";
    s += "# pass = QKV projections + attention core + output projection + full gradient chain\n";
    s += "# standard rows run the dense reference kernels, all other variants the banded kernels\n";
    s += "# median over `repeats` passes after 2 warmups; repeats interleaved across variants per N\n";
    s += "# timing excludes mask construction; steady-state CPU frequency assumed\n";
    char buf[256];
    std::snprintf(buf, sizeof buf, "# heads=%d d_k=%d d_model=%d batch=%d seed=%llu threads=%d\n",
                  cfg.num_heads, cfg.d_k, cfg.num_heads * cfg.d_k, cfg.batch,
                  static_cast<unsigned long long>(cfg.seed), bench_threads());
    s += buf;
    std::vector<int> seen;
    for (const BenchResult& r : results) {
        if (std::find(seen.begin(), seen.end(), r.seq_len) != seen.end()) continue;
        seen.push_back(r.seq_len);
        std::snprintf(buf, sizeof buf, "# workload N=%d checksum=%s\n", r.seq_len,
                      hex_checksum(bench_workload_checksum(cfg, r.seq_len)).c_str());
        s += buf;
    }
    s += "variant,N,H,d_k,batch,repeats,median_s,mean_s,p95_s,tokens_per_sec,speedup\n";
    for (const BenchResult& r : results) {
        if (r.skipped) {
            std::snprintf(buf, sizeof buf, "# skipped %s N=%d: %s\n",
                          variant_name(r.variant).c_str(), r.seq_len, r.note.c_str());
            s += buf;
            continue;
        }
        std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%d,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                      variant_name(r.variant).c_str(), r.seq_len, r.num_heads, r.d_k, r.batch,
                      r.repeats, r.median_s, r.mean_s, r.p95_s, r.tokens_per_sec,
                      r.speedup_vs_standard);
        s += buf;
    }
    return s;
}

std::string bench_json(const std::vector<BenchResult>& results, const BenchConfig& cfg) {
    nlohmann::json j;
    j["bench"]["pass"] = "attention layer forward+backward";
    j["bench"]["num_heads"] = cfg.num_heads;
    j["bench"]["d_k"] = cfg.d_k;
    j["bench"]["d_model"] = cfg.num_heads * cfg.d_k;
    j["bench"]["batch"] = cfg.batch;
    j["bench"]["seed"] = cfg.seed;
    j["bench"]["threads"] = bench_threads();
    j["bench"]["workloads"] = nlohmann::json::array();
    std::vector<int> seen;
    for (const BenchResult& r : results) {
        if (std::find(seen.begin(), seen.end(), r.seq_len) != seen.end()) continue;
        seen.push_back(r.seq_len);
        j["bench"]["workloads"].push_back(
            {{"seq_len", r.seq_len},
             {"checksum", hex_checksum(bench_workload_checksum(cfg, r.seq_len))}});
    }
    j["bench"]["results"] = nlohmann::json::array();
    for (const BenchResult& r : results) {
        nlohmann::json o;
        o["variant"] = variant_name(r.variant);
        if (r.variant.kind == MaskKind::SlidingWindow) o["window"] = r.variant.window;
        o["seq_len"] = r.seq_len;
        o["num_heads"] = r.num_heads;
        o["d_k"] = r.d_k;
        o["batch"] = r.batch;
        o["repeats"] = r.repeats;
        o["median_s"] = r.median_s;
        o["mean_s"] = r.mean_s;
        o["p95_s"] = r.p95_s;
        o["tokens_per_sec"] = r.tokens_per_sec;
        o["speedup_vs_standard"] = r.speedup_vs_standard;
        o["skipped"] = r.skipped;
        o["note"] = r.note;
        j["bench"]["results"].push_back(std::move(o));
    }
    return j.dump(2) + "\n";
}

} // namespace spattn
