// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/band_partition.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace spattn {

/// One (variant, sequence length) cell of the benchmark grid.
struct BenchEntry {
    MaskVariant variant;
    int seq_len = 0;
};

/// Parameters shared by every grid entry; d_model is num_heads * d_k.
/// repeats == 0 picks max(5, 8192 / N) per sequence length so cheap configs
/// collect more samples; a positive value forces that count everywhere,
/// floored at the 5-repeat minimum.
struct BenchConfig {
    int num_heads = 8;
    int d_k = 128;
    int batch = 1;
    int repeats = 0;
    std::uint64_t seed = 1234;
};

/// Timing summary for one entry. Wall time covers a complete attention-layer
/// forward+backward pass: Q/K/V projections, attention core, output
/// projection, and the gradient chain back to the inputs and weights. The
/// projection work is identical across variants, so the time ratio tracks how
/// much of the pass the attention core accounts for at each N.
struct BenchResult {
    MaskVariant variant;
    int seq_len = 0;
    int num_heads = 0;
    int d_k = 0;
    int batch = 0;
    int repeats = 0;
    double median_s = 0;
    double mean_s = 0;
    double p95_s = 0;
    double tokens_per_sec = 0;      // batch * seq_len / median_s
    double speedup_vs_standard = 0; // standard median / this median at equal N; 0 without baseline
    bool skipped = false;           // allocation failure; timing fields stay zero
    std::string note;
};

/// standard and spa at each N in {512, 1024, 2048, 4096}.
std::vector<BenchEntry> default_bench_grid();

/// FNV-1a hash of the exact f32 workload bytes (input, weights, output
/// gradient) generated for one sequence length under cfg. Two runs reporting
/// equal checksums timed identical numbers.
std::uint64_t bench_workload_checksum(const BenchConfig& cfg, int seq_len);

/// Measure every grid entry. Entries sharing a sequence length share one
/// generated workload, and their timed repeats are interleaved round-robin so
/// slow drift in machine speed cancels out of the comparison; two warmup
/// passes per entry are excluded. Throws ShapeError on invalid dimensions;
/// an allocation failure skips the affected entries with a note instead of
/// aborting the run.
std::vector<BenchResult> run_bench(const std::vector<BenchEntry>& grid, const BenchConfig& cfg);

/// CSV report: '#' caveat/config header lines, the column header
/// variant,N,H,d_k,batch,repeats,median_s,mean_s,p95_s,tokens_per_sec,speedup,
/// then one line per measured entry (skipped entries appear as '#' notes).
std::string bench_csv(const std::vector<BenchResult>& results, const BenchConfig& cfg);

/// Same content as JSON. Neither report embeds timestamps; with one seed and
/// thread count, reruns differ only in the measured timing fields.
std::string bench_json(const std::vector<BenchResult>& results, const BenchConfig& cfg);

} // namespace spattn
