// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/attention.hpp"
#include "spattn/band_partition.hpp"

#include <string>
#include <vector>

namespace spattn {

struct EntropyBound {
    std::vector<double> per_head; // ln(W_h)
    double global = 0.0;          // ln(ceil(N / H)), the widest band
};

/// Support-size entropy ceilings of a balanced partition, in nats.
EntropyBound entropy_bound(const BandPartition& p);

/// Shannon entropy of each stored row, nats; empty rows yield -1 so callers
/// can exclude them. Throws NumericError on negative probabilities.
template <typename T>
std::vector<double> row_entropies(const HeadProbs<T>& probs);

struct EntropyStats {
    std::vector<double> per_head; // mean over nonempty rows
    double mean = 0.0;            // mean of the per-head values
};

template <typename T>
EntropyStats attention_entropy(const std::vector<HeadProbs<T>>& probs);

/// Head-diversity score in [0, 1]: mean over query positions of the average
/// pairwise Jensen-Shannon divergence (base e) between head distributions,
/// normalized by ln 2. Pairs with an empty row and queries with fewer than
/// two active heads are excluded. This is an artifact-defined statistic, not
/// a standardized one.
template <typename T>
double head_diversity(const std::vector<HeadProbs<T>>& probs);

/// H x H Jaccard similarity between the allowed (query, key) pair sets of
/// each head pair, row-major. Diagonal entries are 1 by definition.
std::vector<double> support_overlap(const std::vector<HeadMask>& masks);

struct MetricsReport {
    std::string variant;
    int seq_len = 0;
    int num_heads = 0;
    int d_model = 0;
    std::vector<double> per_head_entropy;
    double mean_entropy = 0.0;
    std::vector<double> entropy_bound_per_head;
    double entropy_bound_global = 0.0;
    double diversity_sigma = 0.0;
    std::vector<double> overlap; // H x H
    FlopsCount flops;
    std::string timestamp; // ISO 8601 UTC

    std::string to_json() const;
    std::string to_csv() const; // per-head table: head,entropy,entropy_bound
};

/// Assemble the full report for one attention configuration from captured
/// probabilities. The entropy bounds always come from the balanced partition
/// so SPA numbers can be read against them directly.
MetricsReport collect_metrics(const AttentionConfig& cfg, const std::vector<HeadMask>& masks,
                              const std::vector<HeadProbs<double>>& probs);

std::string utc_timestamp();

} // namespace spattn
