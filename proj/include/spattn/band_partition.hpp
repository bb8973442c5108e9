// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace spattn {

/// One contiguous interval of attention distances, [start, start + width).
struct BandSpec {
    int start = 0; // S_h, smallest distance owned by the head
    int width = 0; // W_h, number of distances

    friend bool operator==(const BandSpec&, const BandSpec&) = default;
};

/// The balanced distance partition for a (seq_len, num_heads) pair: every causal
/// distance 0..N-1 belongs to exactly one head's band, and band widths differ by
/// at most one.
struct BandPartition {
    int seq_len = 0;
    int num_heads = 0;
    int base_width = 0; // floor(N / H)
    int remainder = 0;  // N mod H; that many leading heads get base_width + 1
    std::vector<BandSpec> bands;

    const BandSpec& band(int head) const { return bands.at(static_cast<std::size_t>(head)); }
};

enum class MaskKind { Standard, SPA, SlidingWindow, EBALL, GBHALF };

struct MaskVariant {
    MaskKind kind = MaskKind::SPA;
    int window = 0; // SlidingWindow only; 0 means "derive floor(N/H) at build time"

    static MaskVariant standard() { return {MaskKind::Standard, 0}; }
    static MaskVariant spa() { return {MaskKind::SPA, 0}; }
    static MaskVariant sliding_window(int w = 0) { return {MaskKind::SlidingWindow, w}; }
    static MaskVariant eball() { return {MaskKind::EBALL, 0}; }
    static MaskVariant gbhalf() { return {MaskKind::GBHALF, 0}; }

    friend bool operator==(const MaskVariant&, const MaskVariant&) = default;
};

/// Parse/format the CLI spelling ("standard", "spa", "sliding_window", "eball", "gbhalf").
MaskVariant parse_variant(const std::string& name, int window = 0);
std::string variant_name(const MaskVariant& v);

/// Half-open key interval [begin, end); empty when begin >= end.
struct KeyInterval {
    int begin = 0;
    int end = 0;

    bool empty() const { return begin >= end; }
    int size() const { return empty() ? 0 : end - begin; }

    friend bool operator==(const KeyInterval&, const KeyInterval&) = default;
};

/// Per-head mask: one contiguous allowed key interval per query row. All mask
/// variants in this project reduce to this shape, which is what the banded
/// kernel requires.
struct HeadMask {
    int head = 0;
    std::vector<KeyInterval> allowed; // indexed by query position

    std::uint64_t allowed_pairs() const;
};

/// Balanced partition per W_h = W_base + [h < R], S_h = h*W_base + min(h, R).
/// Requires 1 <= num_heads <= seq_len.
BandPartition compute_partition(int seq_len, int num_heads);

/// Exclusive, contiguous, deliberately unbalanced bands: widths double from
/// floor(N / (2^H - 1)) and the last band absorbs the remainder. Early widths
/// are clamped to keep every band non-empty. Requires 1 <= num_heads <= seq_len.
BandPartition eball_partition(int seq_len, int num_heads);

/// True iff query i may attend key j under head h: j <= i and S_h <= i-j < S_h+W_h.
bool allow(const BandPartition& p, int head, int i, int j);

/// Allowed keys of head h at query i as one interval; empty when i < S_h.
KeyInterval head_support(const BandPartition& p, int head, int i);

/// Materialize the per-head masks for a variant on top of a balanced partition.
std::vector<HeadMask> build_mask(const BandPartition& p, const MaskVariant& v);

struct CoverageReport {
    std::uint64_t covered_pairs = 0;   // causal pairs allowed by >= 1 head
    std::uint64_t duplicate_pairs = 0; // causal pairs allowed by >= 2 heads
    std::uint64_t missing_pairs = 0;   // causal pairs allowed by no head

    std::string to_json() const;
};

/// Brute-force union/intersection count over all causal pairs of the SPA masks
/// of `p`. A complete exclusive partition reports N(N+1)/2, 0, 0.
CoverageReport verify_coverage(const BandPartition& p);

/// Same accounting for an arbitrary mask set (used to expose the gaps of
/// ablation variants like GBHALF).
CoverageReport coverage_of_masks(const std::vector<HeadMask>& masks, int seq_len);

struct PairCount {
    std::vector<std::uint64_t> per_head;
    std::uint64_t total = 0;
};

PairCount pair_count(const std::vector<HeadMask>& masks);

enum class RenderFormat { Ascii, Pgm };

/// N x N grid for one head; allowed cells dark. Ascii rows are 'X'/'.' lines,
/// Pgm is a binary P5 stream (allowed=0, disallowed=255). Refuses seq_len > 4096.
std::string render_mask(const HeadMask& mask, int seq_len, RenderFormat format);

/// Convenience wrapper: one byte stream per head.
std::vector<std::string> render_masks(const std::vector<HeadMask>& masks, int seq_len,
                                      RenderFormat format);

} // namespace spattn
