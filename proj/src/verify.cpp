// SPDX-License-Identifier: Apache-2.0
#include "spattn/verify.hpp"

#include "spattn/attention.hpp"
#include "spattn/attention_op.hpp"
#include "spattn/band_partition.hpp"
#include "spattn/gradcheck.hpp"
#include "spattn/rng.hpp"
#include "spattn/tape.hpp"
#include "spattn/tensor.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <utility>
#include <vector>

namespace spattn {
namespace {

std::string format(const char* fmt, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, fmt, args...);
    return buf;
}

/// The three partition-law suites must see identical configs, so each calls
/// this with the same options and replays one stream.
std::vector<std::pair<int, int>> sample_configs(const VerifyOptions& opt) {
    std::mt19937_64 gen = stream_for_step(opt.seed, 1);
    std::vector<std::pair<int, int>> configs;
    configs.reserve(static_cast<std::size_t>(opt.trials) + 1);
    if (opt.pinned_seq_len > 0 && opt.pinned_heads > 0) {
        configs.emplace_back(opt.pinned_seq_len, opt.pinned_heads);
    }
    for (int t = 0; t < opt.trials; ++t) {
        const int n = 1 + static_cast<int>(uniform_below(gen, static_cast<std::uint64_t>(opt.max_seq_len)));
        const int h = 1 + static_cast<int>(uniform_below(gen, static_cast<std::uint64_t>(n)));
        configs.emplace_back(n, h);
    }
    return configs;
}

Tensor<double> random_heads(int h, int n, int dk, std::mt19937_64& gen) {
    Tensor<double> t({h, n, dk});
    fill_normal(std::span<double>(t.data), gen);
    return t;
}

const MaskVariant kOracleVariants[4] = {MaskVariant::spa(), MaskVariant::sliding_window(),
                                        MaskVariant::eball(), MaskVariant::gbhalf()};

} // namespace

SuiteResult check_coverage(const VerifyOptions& opt) {
    SuiteResult r{"distance-coverage", true, 0, ""};
    for (const auto& [n, h] : sample_configs(opt)) {
        const CoverageReport rep = verify_coverage(compute_partition(n, h));
        const std::uint64_t want =
            static_cast<std::uint64_t>(n) * (static_cast<std::uint64_t>(n) + 1) / 2;
        ++r.checks;
        if (rep.covered_pairs != want || rep.duplicate_pairs != 0 || rep.missing_pairs != 0) {
            r.passed = false;
            r.detail = format("N=%d H=%d covered=%llu want=%llu duplicates=%llu missing=%llu", n, h,
                              static_cast<unsigned long long>(rep.covered_pairs),
                              static_cast<unsigned long long>(want),
                              static_cast<unsigned long long>(rep.duplicate_pairs),
                              static_cast<unsigned long long>(rep.missing_pairs));
            return r;
        }
    }
    r.detail = format("%llu configs, every causal pair covered exactly once",
                      static_cast<unsigned long long>(r.checks));
    return r;
}

SuiteResult check_exclusivity(const VerifyOptions& opt) {
    SuiteResult r{"band-exclusivity", true, 0, ""};
    for (const auto& [n, h] : sample_configs(opt)) {
        const auto masks = build_mask(compute_partition(n, h), MaskVariant::spa());
        for (int i = 0; i < n; ++i) {
            for (int a = 0; a < h; ++a) {
                const KeyInterval ia = masks[static_cast<std::size_t>(a)].allowed[static_cast<std::size_t>(i)];
                if (ia.empty()) continue;
                for (int b = a + 1; b < h; ++b) {
                    const KeyInterval ib =
                        masks[static_cast<std::size_t>(b)].allowed[static_cast<std::size_t>(i)];
                    ++r.checks;
                    if (!ib.empty() && std::max(ia.begin, ib.begin) < std::min(ia.end, ib.end)) {
                        r.passed = false;
                        r.detail = format("N=%d H=%d query=%d heads %d and %d overlap on [%d,%d)", n,
                                          h, i, a, b, std::max(ia.begin, ib.begin),
                                          std::min(ia.end, ib.end));
                        return r;
                    }
                }
            }
        }
    }
    r.detail = format("%llu interval pairs, no overlap",
                      static_cast<unsigned long long>(r.checks));
    return r;
}

SuiteResult check_balance(const VerifyOptions& opt) {
    SuiteResult r{"partition-balance", true, 0, ""};
    for (const auto& [n, h] : sample_configs(opt)) {
        const BandPartition p = compute_partition(n, h);
        ++r.checks;
        int sum = 0, lo = n + 1, hi = 0, next = 0;
        bool contiguous = true;
        for (const BandSpec& b : p.bands) {
            sum += b.width;
            lo = std::min(lo, b.width);
            hi = std::max(hi, b.width);
            contiguous = contiguous && b.start == next && b.width >= 1;
            next = b.start + b.width;
        }
        if (sum != n || hi - lo > 1 || !contiguous || next != n) {
            r.passed = false;
            r.detail = format("N=%d H=%d widths sum=%d spread=%d contiguous=%d end=%d", n, h, sum,
                              hi - lo, contiguous ? 1 : 0, next);
            return r;
        }
    }
    r.detail = format("%llu configs, widths balanced and contiguous",
                      static_cast<unsigned long long>(r.checks));
    return r;
}

SuiteResult check_oracle_equivalence(const VerifyOptions& opt) {
    SuiteResult r{"oracle-equivalence", true, 0, ""};
    std::mt19937_64 gen = stream_for_step(opt.seed, 2);
    const int heads_pool[4] = {1, 2, 4, 8};
    double worst = 0;
    for (int t = 0; t < opt.oracle_instances; ++t) {
        const int n = uniform_int(gen, 8, 64);
        const int h = heads_pool[uniform_below(gen, 4)];
        const int dk = uniform_int(gen, 1, 16);
        const MaskVariant variant = kOracleVariants[t % 4];
        const AttentionConfig cfg{n, h, h * dk, variant};
        const auto masks = build_mask(compute_partition(n, h), variant);
        const auto q = random_heads(h, n, dk, gen);
        const auto k = random_heads(h, n, dk, gen);
        const auto v = random_heads(h, n, dk, gen);
        const auto oracle = masked_dense_forward(q, k, v, masks, cfg);
        const auto fast = banded_forward(q, k, v, masks, cfg);
        double diff = 0;
        for (std::size_t i = 0; i < oracle.output.data.size(); ++i) {
            diff = std::max(diff, std::abs(oracle.output.data[i] - fast.output.data[i]));
        }
        worst = std::max(worst, diff);
        ++r.checks;
        if (!(diff < opt.oracle_tol)) {
            r.passed = false;
            r.detail = format("instance %d variant=%s N=%d H=%d d_k=%d max|diff|=%.3g", t,
                              variant_name(variant).c_str(), n, h, dk, diff);
            return r;
        }
    }
    r.detail = format("%llu instances, worst elementwise difference %.3g",
                      static_cast<unsigned long long>(r.checks), worst);
    return r;
}

SuiteResult check_gradients(const VerifyOptions& opt) {
    SuiteResult r{"gradient-check", true, 0, ""};
    std::mt19937_64 gen = stream_for_step(opt.seed, 3);
    double worst_fd = 0, worst_oracle = 0;
    for (int t = 0; t < opt.gradient_instances; ++t) {
        const int n = uniform_int(gen, 4, 16);
        const int h = uniform_int(gen, 1, std::min(n, 4));
        const int dk = uniform_int(gen, 2, 5);
        const MaskVariant variant = kOracleVariants[t % 4];
        const AttentionConfig cfg{n, h, h * dk, variant};
        const auto masks =
            std::make_shared<const std::vector<HeadMask>>(build_mask(compute_partition(n, h), variant));
        const auto q = random_heads(h, n, dk, gen);
        const auto k = random_heads(h, n, dk, gen);
        const auto v = random_heads(h, n, dk, gen);
        Tensor<double> w({n, cfg.d_model});
        fill_normal(std::span<double>(w.data), gen);

        // central differences on sum(output * w) with respect to each input
        for (int which = 0; which < 3; ++which) {
            const double err = finite_difference_check(
                [&](Tape<double>& tape, int id) {
                    const auto qi = which == 0 ? id : tape.leaf(q);
                    const auto ki = which == 1 ? id : tape.leaf(k);
                    const auto vi = which == 2 ? id : tape.leaf(v);
                    return tape.sum(tape.mul(banded_attention(tape, qi, ki, vi, masks, cfg),
                                             tape.leaf(w)));
                },
                which == 0 ? q : which == 1 ? k : v, 1e-5, opt.seed + static_cast<std::uint64_t>(t));
            worst_fd = std::max(worst_fd, err);
            ++r.checks;
            if (!(err < opt.fd_tol)) {
                r.passed = false;
                r.detail = format("instance %d variant=%s N=%d H=%d d_k=%d input=%c fd rel err=%.3g",
                                  t, variant_name(variant).c_str(), n, h, dk, "qkv"[which], err);
                return r;
            }
        }

        // independent autograd oracle assembled from primitive tape ops
        Tape<double> fast;
        const auto qi = fast.leaf(q), ki = fast.leaf(k), vi = fast.leaf(v);
        fast.backward(fast.sum(fast.mul(banded_attention(fast, qi, ki, vi, masks, cfg), fast.leaf(w))));

        Tape<double> oracle;
        std::vector<int> oq, ok, ov;
        int loss = -1;
        for (int hh = 0; hh < h; ++hh) {
            Tensor<double> qh({n, dk}), kh({n, dk}), vh({n, dk}), wh({n, dk});
            for (int i = 0; i < n; ++i) {
                for (int d = 0; d < dk; ++d) {
                    const std::size_t src = (static_cast<std::size_t>(hh) * n + i) * dk + d;
                    qh(i, d) = q.data[src];
                    kh(i, d) = k.data[src];
                    vh(i, d) = v.data[src];
                    wh(i, d) = w(i, hh * dk + d);
                }
            }
            oq.push_back(oracle.leaf(qh));
            ok.push_back(oracle.leaf(kh));
            ov.push_back(oracle.leaf(vh));
            const auto scores =
                oracle.scale(oracle.matmul(oq[hh], oracle.transpose(ok[hh])), 1.0 / std::sqrt(dk));
            const auto probs = oracle.masked_softmax_rows(scores, (*masks)[hh].allowed);
            const auto part = oracle.sum(oracle.mul(oracle.matmul(probs, ov[hh]), oracle.leaf(wh)));
            loss = hh == 0 ? part : oracle.add(loss, part);
        }
        oracle.backward(loss);

        double diff = 0;
        for (int hh = 0; hh < h; ++hh) {
            const std::size_t off = static_cast<std::size_t>(hh) * n * dk;
            for (std::size_t e = 0; e < static_cast<std::size_t>(n) * dk; ++e) {
                diff = std::max(diff, std::abs(fast.grad(qi)[off + e] - oracle.grad(oq[hh])[e]));
                diff = std::max(diff, std::abs(fast.grad(ki)[off + e] - oracle.grad(ok[hh])[e]));
                diff = std::max(diff, std::abs(fast.grad(vi)[off + e] - oracle.grad(ov[hh])[e]));
            }
        }
        worst_oracle = std::max(worst_oracle, diff);
        ++r.checks;
        if (!(diff < opt.autograd_tol)) {
            r.passed = false;
            r.detail = format("instance %d variant=%s N=%d H=%d d_k=%d autograd diff=%.3g", t,
                              variant_name(variant).c_str(), n, h, dk, diff);
            return r;
        }
    }
    r.detail = format("%llu checks, worst fd rel err %.3g, worst autograd diff %.3g",
                      static_cast<unsigned long long>(r.checks), worst_fd, worst_oracle);
    return r;
}

SuiteResult check_gap_detection(const VerifyOptions& opt) {
    (void)opt;
    SuiteResult r{"gap-detection", true, 0, ""};
    const std::pair<int, int> configs[2] = {{64, 4}, {33, 5}};
    std::uint64_t reported = 0;
    for (const auto& [n, h] : configs) {
        const BandPartition p = compute_partition(n, h);
        const CoverageReport gap = coverage_of_masks(build_mask(p, MaskVariant::gbhalf()), n);
        const CoverageReport full = coverage_of_masks(build_mask(p, MaskVariant::spa()), n);
        r.checks += 2;
        if (gap.missing_pairs == 0 || gap.duplicate_pairs != 0) {
            r.passed = false;
            r.detail = format("N=%d H=%d half-band masks reported missing=%llu duplicates=%llu", n,
                              h, static_cast<unsigned long long>(gap.missing_pairs),
                              static_cast<unsigned long long>(gap.duplicate_pairs));
            return r;
        }
        if (full.missing_pairs != 0 || full.duplicate_pairs != 0) {
            r.passed = false;
            r.detail = format("N=%d H=%d balanced masks reported missing=%llu duplicates=%llu", n,
                              h, static_cast<unsigned long long>(full.missing_pairs),
                              static_cast<unsigned long long>(full.duplicate_pairs));
            return r;
        }
        reported += gap.missing_pairs;
    }
    r.detail = format("checker reports %llu dropped pairs on half-band masks, 0 on balanced",
                      static_cast<unsigned long long>(reported));
    return r;
}

std::vector<SuiteResult> run_verify_suites(const VerifyOptions& opt) {
    return {check_coverage(opt),   check_exclusivity(opt), check_balance(opt),
            check_oracle_equivalence(opt), check_gradients(opt),   check_gap_detection(opt)};
}

bool all_passed(const std::vector<SuiteResult>& suites) {
    return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed; });
}

std::string first_failure(const std::vector<SuiteResult>& suites) {
    for (const SuiteResult& s : suites) {
        if (!s.passed) return s.name + ": " + s.detail;
    }
    return "";
}

std::string verify_table(const std::vector<SuiteResult>& suites) {
    std::string out = format("%-20s %-6s %10s  %s\n", "suite", "status", "checks", "detail");
    for (const SuiteResult& s : suites) {
        out += format("%-20s %-6s %10llu  %s\n", s.name.c_str(), s.passed ? "pass" : "FAIL",
                      static_cast<unsigned long long>(s.checks), s.detail.c_str());
    }
    return out;
}

std::string verify_json(const std::vector<SuiteResult>& suites, const VerifyOptions& opt) {
    nlohmann::json j;
    j["verify"]["options"] = {{"trials", opt.trials},
                              {"max_seq_len", opt.max_seq_len},
                              {"pinned_seq_len", opt.pinned_seq_len},
                              {"pinned_heads", opt.pinned_heads},
                              {"oracle_instances", opt.oracle_instances},
                              {"gradient_instances", opt.gradient_instances},
                              {"seed", opt.seed},
                              {"oracle_tol", opt.oracle_tol},
                              {"fd_tol", opt.fd_tol},
                              {"autograd_tol", opt.autograd_tol}};
    j["verify"]["suites"] = nlohmann::json::array();
    for (const SuiteResult& s : suites) {
        j["verify"]["suites"].push_back(
            {{"name", s.name}, {"passed", s.passed}, {"checks", s.checks}, {"detail", s.detail}});
    }
    j["verify"]["all_passed"] = all_passed(suites);
    return j.dump(2) + "\n";
}

} // namespace spattn
