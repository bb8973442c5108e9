// SPDX-License-Identifier: Apache-2.0
#include "spattn/metrics.hpp"

#include "spattn/errors.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <sstream>

namespace spattn {

EntropyBound entropy_bound(const BandPartition& p) {
    EntropyBound b;
    b.per_head.reserve(p.bands.size());
    for (const BandSpec& band : p.bands) {
        b.per_head.push_back(std::log(static_cast<double>(band.width)));
    }
    b.global = std::log(static_cast<double>(p.base_width + (p.remainder > 0 ? 1 : 0)));
    return b;
}

template <typename T>
std::vector<double> row_entropies(const HeadProbs<T>& probs) {
    std::vector<double> out(probs.support.size(), -1.0);
    for (std::size_t i = 0; i < probs.support.size(); ++i) {
        const int m = probs.support[i].size();
        if (m == 0) {
            continue;
        }
        const T* row = probs.packed.data() + probs.offsets[i];
        double h = 0.0;
        for (int j = 0; j < m; ++j) {
            const double p = static_cast<double>(row[j]);
            if (p < 0.0) {
                throw NumericError("negative probability " + std::to_string(p) + " at row " +
                                   std::to_string(i));
            }
            if (p > 0.0) {
                h -= p * std::log(p);
            }
        }
        out[i] = h;
    }
    return out;
}

template <typename T>
EntropyStats attention_entropy(const std::vector<HeadProbs<T>>& probs) {
    EntropyStats s;
    s.per_head.reserve(probs.size());
    double total = 0.0;
    int active_heads = 0;
    for (const HeadProbs<T>& hp : probs) {
        const std::vector<double> rows = row_entropies(hp);
        double sum = 0.0;
        int n = 0;
        for (double h : rows) {
            if (h >= 0.0) {
                sum += h;
                ++n;
            }
        }
        const double head_mean = n > 0 ? sum / n : 0.0;
        s.per_head.push_back(head_mean);
        if (n > 0) {
            total += head_mean;
            ++active_heads;
        }
    }
    s.mean = active_heads > 0 ? total / active_heads : 0.0;
    return s;
}

namespace {

/// Jensen-Shannon divergence between two packed rows, base e. Keys outside
/// either support carry zero mass and contribute nothing.
template <typename T>
double packed_jsd(const HeadProbs<T>& a, const HeadProbs<T>& b, int row) {
    const KeyInterval ia = a.support[static_cast<std::size_t>(row)];
    const KeyInterval ib = b.support[static_cast<std::size_t>(row)];
    const T* pa = a.row(row);
    const T* pb = b.row(row);
    auto mass = [](const KeyInterval& iv, const T* p, int j) -> double {
        return (j >= iv.begin && j < iv.end) ? static_cast<double>(p[j - iv.begin]) : 0.0;
    };
    double d = 0.0;
    const int lo = std::min(ia.begin, ib.begin);
    const int hi = std::max(ia.end, ib.end);
    for (int j = lo; j < hi; ++j) {
        const double p = mass(ia, pa, j);
        const double q = mass(ib, pb, j);
        const double m = 0.5 * (p + q);
        if (p > 0.0) {
            d += 0.5 * p * std::log(p / m);
        }
        if (q > 0.0) {
            d += 0.5 * q * std::log(q / m);
        }
    }
    return d;
}

} // namespace

template <typename T>
double head_diversity(const std::vector<HeadProbs<T>>& probs) {
    if (probs.size() < 2) {
        return 0.0;
    }
    const std::size_t n = probs.front().support.size();
    const double ln2 = std::log(2.0);
    double query_sum = 0.0;
    int counted_queries = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double pair_sum = 0.0;
        int pairs = 0;
        for (std::size_t h1 = 0; h1 < probs.size(); ++h1) {
            if (probs[h1].support[i].empty()) {
                continue;
            }
            for (std::size_t h2 = h1 + 1; h2 < probs.size(); ++h2) {
                if (probs[h2].support[i].empty()) {
                    continue;
                }
                pair_sum += packed_jsd(probs[h1], probs[h2], static_cast<int>(i));
                ++pairs;
            }
        }
        if (pairs > 0) {
            query_sum += pair_sum / pairs / ln2;
            ++counted_queries;
        }
    }
    return counted_queries > 0 ? query_sum / counted_queries : 0.0;
}

std::vector<double> support_overlap(const std::vector<HeadMask>& masks) {
    const std::size_t h = masks.size();
    std::vector<double> j(h * h, 0.0);
    std::vector<std::uint64_t> sizes(h);
    for (std::size_t a = 0; a < h; ++a) {
        sizes[a] = masks[a].allowed_pairs();
    }
    for (std::size_t a = 0; a < h; ++a) {
        for (std::size_t b = a; b < h; ++b) {
            std::uint64_t inter = 0;
            for (std::size_t i = 0; i < masks[a].allowed.size(); ++i) {
                const KeyInterval& x = masks[a].allowed[i];
                const KeyInterval& y = masks[b].allowed[i];
                const int lo = std::max(x.begin, y.begin);
                const int hi = std::min(x.end, y.end);
                if (hi > lo) {
                    inter += static_cast<std::uint64_t>(hi - lo);
                }
            }
            const std::uint64_t uni = sizes[a] + sizes[b] - inter;
            double val;
            if (uni == 0) {
                val = a == b ? 1.0 : 0.0;
            } else {
                val = static_cast<double>(inter) / static_cast<double>(uni);
            }
            j[a * h + b] = val;
            j[b * h + a] = val;
        }
    }
    return j;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

namespace {

void append_array(std::ostringstream& os, const std::vector<double>& v) {
    os << "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        os << (i ? "," : "") << buf;
    }
    os << "]";
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

} // namespace

std::string MetricsReport::to_json() const {
    std::ostringstream os;
    os << "{\"variant\":\"" << variant << "\",\"seq_len\":" << seq_len
       << ",\"num_heads\":" << num_heads << ",\"d_model\":" << d_model
       << ",\"per_head_entropy\":";
    append_array(os, per_head_entropy);
    os << ",\"mean_entropy\":" << fmt(mean_entropy) << ",\"entropy_bound\":";
    append_array(os, entropy_bound_per_head);
    os << ",\"entropy_bound_global\":" << fmt(entropy_bound_global)
       << ",\"diversity_sigma\":" << fmt(diversity_sigma)
       << ",\"diversity_note\":\"artifact-defined mean pairwise Jensen-Shannon divergence, "
          "normalized by ln 2\""
       << ",\"support_overlap\":";
    append_array(os, overlap);
    os << ",\"flops\":{\"allowed_pairs\":" << flops.allowed_pairs
       << ",\"score_madds\":" << flops.score_madds
       << ",\"weighted_sum_madds\":" << flops.weighted_sum_madds << ",\"total\":" << flops.total
       << "},\"timestamp\":\"" << timestamp << "\"}";
    return os.str();
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "head,entropy,entropy_bound\n";
    for (std::size_t h = 0; h < per_head_entropy.size(); ++h) {
        os << h << "," << fmt(per_head_entropy[h]) << "," << fmt(entropy_bound_per_head[h])
           << "\n";
    }
    return os.str();
}

MetricsReport collect_metrics(const AttentionConfig& cfg, const std::vector<HeadMask>& masks,
                              const std::vector<HeadProbs<double>>& probs) {
    cfg.validate();
    MetricsReport r;
    r.variant = variant_name(cfg.variant);
    r.seq_len = cfg.seq_len;
    r.num_heads = cfg.num_heads;
    r.d_model = cfg.d_model;
    const EntropyStats es = attention_entropy(probs);
    r.per_head_entropy = es.per_head;
    r.mean_entropy = es.mean;
    const EntropyBound b = entropy_bound(compute_partition(cfg.seq_len, cfg.num_heads));
    r.entropy_bound_per_head = b.per_head;
    r.entropy_bound_global = b.global;
    r.diversity_sigma = head_diversity(probs);
    r.overlap = support_overlap(masks);
    r.flops = flops_count(cfg.variant, cfg.seq_len, cfg.num_heads, cfg.d_k());
    r.timestamp = utc_timestamp();
    return r;
}

template std::vector<double> row_entropies<float>(const HeadProbs<float>&);
template std::vector<double> row_entropies<double>(const HeadProbs<double>&);
template EntropyStats attention_entropy<float>(const std::vector<HeadProbs<float>>&);
template EntropyStats attention_entropy<double>(const std::vector<HeadProbs<double>>&);
template double head_diversity<float>(const std::vector<HeadProbs<float>>&);
template double head_diversity<double>(const std::vector<HeadProbs<double>>&);

} // namespace spattn
