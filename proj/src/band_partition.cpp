// SPDX-License-Identifier: Apache-2.0
#include "spattn/band_partition.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace spattn {

namespace {

void check_partition_args(int seq_len, int num_heads) {
    if (seq_len <= 0 || num_heads <= 0) {
        throw std::invalid_argument("seq_len and num_heads must be positive, got seq_len=" +
                                    std::to_string(seq_len) +
                                    " num_heads=" + std::to_string(num_heads));
    }
    if (num_heads > seq_len) {
        throw std::invalid_argument("num_heads=" + std::to_string(num_heads) +
                                    " exceeds seq_len=" + std::to_string(seq_len));
    }
}

void check_query(const BandPartition& p, int head, int i) {
    if (head < 0 || head >= p.num_heads) {
        throw std::invalid_argument("head index " + std::to_string(head) + " out of [0, " +
                                    std::to_string(p.num_heads) + ")");
    }
    if (i < 0 || i >= p.seq_len) {
        throw std::invalid_argument("query position " + std::to_string(i) + " out of [0, " +
                                    std::to_string(p.seq_len) + ")");
    }
}

// Allowed keys for query i given a band [start, start+width).
KeyInterval band_support(int start, int width, int i) {
    if (i < start) {
        return {0, 0};
    }
    const int lo = std::max(0, i - start - width + 1);
    const int hi = i - start; // inclusive
    return {lo, hi + 1};
}

std::vector<HeadMask> masks_from_bands(const std::vector<BandSpec>& bands, int seq_len) {
    std::vector<HeadMask> masks(bands.size());
    for (std::size_t h = 0; h < bands.size(); ++h) {
        masks[h].head = static_cast<int>(h);
        masks[h].allowed.resize(static_cast<std::size_t>(seq_len));
        for (int i = 0; i < seq_len; ++i) {
            masks[h].allowed[static_cast<std::size_t>(i)] =
                band_support(bands[h].start, bands[h].width, i);
        }
    }
    return masks;
}

} // namespace

MaskVariant parse_variant(const std::string& name, int window) {
    if (name == "standard") return MaskVariant::standard();
    if (name == "spa") return MaskVariant::spa();
    if (name == "sliding_window") return MaskVariant::sliding_window(window);
    if (name == "eball") return MaskVariant::eball();
    if (name == "gbhalf") return MaskVariant::gbhalf();
    throw std::invalid_argument("unknown mask variant '" + name +
                                "' (expected standard|spa|sliding_window|eball|gbhalf)");
}

std::string variant_name(const MaskVariant& v) {
    switch (v.kind) {
    case MaskKind::Standard: return "standard";
    case MaskKind::SPA: return "spa";
    case MaskKind::SlidingWindow: return "sliding_window";
    case MaskKind::EBALL: return "eball";
    case MaskKind::GBHALF: return "gbhalf";
    }
    return "?";
}

std::uint64_t HeadMask::allowed_pairs() const {
    std::uint64_t n = 0;
    for (const auto& iv : allowed) {
        n += static_cast<std::uint64_t>(iv.size());
    }
    return n;
}

BandPartition compute_partition(int seq_len, int num_heads) {
    check_partition_args(seq_len, num_heads);
    BandPartition p;
    p.seq_len = seq_len;
    p.num_heads = num_heads;
    p.base_width = seq_len / num_heads;
    p.remainder = seq_len % num_heads;
    p.bands.resize(static_cast<std::size_t>(num_heads));
    int start = 0;
    for (int h = 0; h < num_heads; ++h) {
        const int width = p.base_width + (h < p.remainder ? 1 : 0);
        p.bands[static_cast<std::size_t>(h)] = {start, width};
        start += width;
    }
    return p;
}

BandPartition eball_partition(int seq_len, int num_heads) {
    check_partition_args(seq_len, num_heads);
    BandPartition p;
    p.seq_len = seq_len;
    p.num_heads = num_heads;
    p.base_width = seq_len / num_heads;
    p.remainder = seq_len % num_heads;
    p.bands.resize(static_cast<std::size_t>(num_heads));

    // First width targets N / (2^H - 1); each following band doubles; the last
    // absorbs whatever is left. Clamps keep every band at least one distance
    // wide even when 2^H - 1 > N.
    const std::uint64_t denom =
        num_heads < 63 ? ((1ull << num_heads) - 1ull) : ~0ull;
    std::int64_t width = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(static_cast<std::uint64_t>(seq_len) / denom));
    int start = 0;
    for (int h = 0; h + 1 < num_heads; ++h) {
        const std::int64_t room = static_cast<std::int64_t>(seq_len) - start - (num_heads - 1 - h);
        const int w = static_cast<int>(std::clamp<std::int64_t>(width, 1, room));
        p.bands[static_cast<std::size_t>(h)] = {start, w};
        start += w;
        width = 2 * static_cast<std::int64_t>(w);
    }
    p.bands[static_cast<std::size_t>(num_heads - 1)] = {start, seq_len - start};
    return p;
}

bool allow(const BandPartition& p, int head, int i, int j) {
    check_query(p, head, i);
    if (j < 0 || j >= p.seq_len) {
        throw std::invalid_argument("key position " + std::to_string(j) + " out of [0, " +
                                    std::to_string(p.seq_len) + ")");
    }
    if (j > i) {
        return false;
    }
    const BandSpec& b = p.band(head);
    const int dist = i - j;
    return dist >= b.start && dist < b.start + b.width;
}

KeyInterval head_support(const BandPartition& p, int head, int i) {
    check_query(p, head, i);
    const BandSpec& b = p.band(head);
    return band_support(b.start, b.width, i);
}

std::vector<HeadMask> build_mask(const BandPartition& p, const MaskVariant& v) {
    const int n = p.seq_len;
    const int heads = p.num_heads;
    std::vector<BandSpec> bands(static_cast<std::size_t>(heads));
    switch (v.kind) {
    case MaskKind::Standard:
        for (auto& b : bands) b = {0, n};
        break;
    case MaskKind::SPA:
        bands = p.bands;
        break;
    case MaskKind::SlidingWindow: {
        int w = v.window > 0 ? v.window : std::max(1, n / heads);
        if (w > n) {
            throw std::invalid_argument("sliding window " + std::to_string(w) +
                                        " exceeds seq_len " + std::to_string(n));
        }
        for (auto& b : bands) b = {0, w};
        break;
    }
    case MaskKind::EBALL:
        bands = eball_partition(n, heads).bands;
        break;
    case MaskKind::GBHALF:
        // First half of each band, rounded up so width-1 bands keep one distance.
        for (int h = 0; h < heads; ++h) {
            const BandSpec& b = p.band(h);
            bands[static_cast<std::size_t>(h)] = {b.start, (b.width + 1) / 2};
        }
        break;
    }
    return masks_from_bands(bands, n);
}

std::string CoverageReport::to_json() const {
    std::ostringstream os;
    os << "{\"covered_pairs\":" << covered_pairs << ",\"duplicate_pairs\":" << duplicate_pairs
       << ",\"missing_pairs\":" << missing_pairs << "}";
    return os.str();
}

CoverageReport coverage_of_masks(const std::vector<HeadMask>& masks, int seq_len) {
    CoverageReport r;
    std::vector<int> delta(static_cast<std::size_t>(seq_len) + 1);
    for (int i = 0; i < seq_len; ++i) {
        std::fill(delta.begin(), delta.begin() + i + 2, 0);
        for (const auto& m : masks) {
            const KeyInterval iv = m.allowed[static_cast<std::size_t>(i)];
            if (!iv.empty()) {
                ++delta[static_cast<std::size_t>(iv.begin)];
                --delta[static_cast<std::size_t>(iv.end)];
            }
        }
        int count = 0;
        for (int j = 0; j <= i; ++j) {
            count += delta[static_cast<std::size_t>(j)];
            if (count == 0) {
                ++r.missing_pairs;
            } else {
                ++r.covered_pairs;
                if (count > 1) {
                    ++r.duplicate_pairs;
                }
            }
        }
    }
    return r;
}

CoverageReport verify_coverage(const BandPartition& p) {
    return coverage_of_masks(build_mask(p, MaskVariant::spa()), p.seq_len);
}

PairCount pair_count(const std::vector<HeadMask>& masks) {
    PairCount pc;
    pc.per_head.reserve(masks.size());
    for (const auto& m : masks) {
        pc.per_head.push_back(m.allowed_pairs());
        pc.total += pc.per_head.back();
    }
    return pc;
}

std::string render_mask(const HeadMask& mask, int seq_len, RenderFormat format) {
    constexpr int kMaxRenderSize = 4096;
    if (seq_len > kMaxRenderSize) {
        throw std::invalid_argument("refusing to render seq_len=" + std::to_string(seq_len) +
                                    " (limit " + std::to_string(kMaxRenderSize) + ")");
    }
    if (static_cast<int>(mask.allowed.size()) != seq_len) {
        throw std::invalid_argument("mask has " + std::to_string(mask.allowed.size()) +
                                    " rows, expected " + std::to_string(seq_len));
    }
    std::string out;
    if (format == RenderFormat::Ascii) {
        out.reserve(static_cast<std::size_t>(seq_len) * (static_cast<std::size_t>(seq_len) + 1));
        for (int i = 0; i < seq_len; ++i) {
            const KeyInterval iv = mask.allowed[static_cast<std::size_t>(i)];
            for (int j = 0; j < seq_len; ++j) {
                out.push_back(!iv.empty() && j >= iv.begin && j < iv.end ? 'X' : '.');
            }
            out.push_back('\n');
        }
    } else {
        out = "P5\n" + std::to_string(seq_len) + " " + std::to_string(seq_len) + "\n255\n";
        out.reserve(out.size() + static_cast<std::size_t>(seq_len) * seq_len);
        for (int i = 0; i < seq_len; ++i) {
            const KeyInterval iv = mask.allowed[static_cast<std::size_t>(i)];
            for (int j = 0; j < seq_len; ++j) {
                out.push_back(!iv.empty() && j >= iv.begin && j < iv.end ? '\x00' : '\xff');
            }
        }
    }
    return out;
}

std::vector<std::string> render_masks(const std::vector<HeadMask>& masks, int seq_len,
                                      RenderFormat format) {
    std::vector<std::string> out;
    out.reserve(masks.size());
    for (const auto& m : masks) {
        out.push_back(render_mask(m, seq_len, format));
    }
    return out;
}

} // namespace spattn
