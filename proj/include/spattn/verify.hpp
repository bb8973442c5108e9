// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spattn {

/// Outcome of one verification suite: how many individual checks ran and the
/// first counterexample when something failed.
struct SuiteResult {
    std::string name;
    bool passed = false;
    std::uint64_t checks = 0;
    std::string detail; // first counterexample, or a one-line summary
};

struct VerifyOptions {
    int trials = 50;           // randomized (N, H) partition configs
    int max_seq_len = 512;     // cap for randomized N
    int pinned_seq_len = 0;    // when both pinned fields are positive, that
    int pinned_heads = 0;      // exact config is checked before the random ones
    int oracle_instances = 50; // banded vs masked-dense forward comparisons
    int gradient_instances = 6;
    std::uint64_t seed = 1234;
    double oracle_tol = 1e-10;  // f64 elementwise forward agreement
    double fd_tol = 1e-4;       // worst relative error vs central differences
    double autograd_tol = 1e-8; // absolute agreement with the tape-built oracle
};

/// Every causal distance of each sampled config is owned by exactly one head:
/// no gaps, no duplicates, full pair count.
SuiteResult check_coverage(const VerifyOptions& opt);

/// Per-query allowed key intervals of distinct heads never intersect, brute
/// force over every query and head pair of the same sampled configs.
SuiteResult check_exclusivity(const VerifyOptions& opt);

/// Band widths sum to N, differ by at most one, and tile [0, N) contiguously
/// on the same sampled configs.
SuiteResult check_balance(const VerifyOptions& opt);

/// banded_forward equals masked_dense_forward elementwise at f64 across the
/// spa, sliding_window, eball, and gbhalf variants.
SuiteResult check_oracle_equivalence(const VerifyOptions& opt);

/// banded_backward matches central finite differences (relative error) and an
/// independent autograd oracle assembled from primitive tape ops (absolute).
SuiteResult check_gradients(const VerifyOptions& opt);

/// The coverage checker must flag masks that drop pairs; the half-band
/// ablation drops pairs by construction, the balanced partition drops none.
SuiteResult check_gap_detection(const VerifyOptions& opt);

/// All suites above in a fixed order.
std::vector<SuiteResult> run_verify_suites(const VerifyOptions& opt);

bool all_passed(const std::vector<SuiteResult>& suites);

/// First failing suite formatted as "name: detail", empty when all passed.
std::string first_failure(const std::vector<SuiteResult>& suites);

/// Fixed-width table, one row per suite.
std::string verify_table(const std::vector<SuiteResult>& suites);

/// Machine-readable report; carries the option set and no timestamps, so a
/// fixed invocation is byte-stable across runs.
std::string verify_json(const std::vector<SuiteResult>& suites, const VerifyOptions& opt);

} // namespace spattn
