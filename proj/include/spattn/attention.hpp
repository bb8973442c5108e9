// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/band_partition.hpp"
#include "spattn/errors.hpp"
#include "spattn/tensor.hpp"

#include <cstdint>
#include <vector>

namespace spattn {

struct AttentionConfig {
    int seq_len = 0;
    int num_heads = 0;
    int d_model = 0;
    MaskVariant variant = MaskVariant::spa();

    int d_k() const { return d_model / num_heads; }

    /// Throws ShapeError unless N >= 1, 1 <= H <= N, and H divides d_model.
    void validate() const;
};

/// Packed per-head attention probabilities: row i of the (conceptual) N x N
/// matrix holds nonzeros only inside support[i], stored contiguously in
/// `packed` at [offsets[i], offsets[i+1]).
template <typename T>
struct HeadProbs {
    std::vector<KeyInterval> support;  // N entries
    std::vector<std::size_t> offsets;  // N + 1 entries
    std::vector<T> packed;

    const T* row(int i) const { return packed.data() + offsets[static_cast<std::size_t>(i)]; }
    int row_size(int i) const { return support[static_cast<std::size_t>(i)].size(); }
};

template <typename T>
struct AttentionOutput {
    Tensor<T> output;                 // N x d_model, heads concatenated
    std::vector<HeadProbs<T>> probs;  // one per head when requested, else empty
};

/// Activations the banded backward pass needs, captured by banded_forward.
template <typename T>
struct BandedSaved {
    std::vector<HeadProbs<T>> probs;
    std::size_t peak_score_elems = 0; // largest score scratch alive at once, per head
    bool valid = false;
};

template <typename T>
struct BandedGrads {
    Tensor<T> dq, dk, dv; // each H x N x d_k
};

/// Full causal multi-head attention, materializing per-head N x N scores.
/// Q, K, V are H x N x d_k. This is the dense baseline the benchmark times.
template <typename T>
AttentionOutput<T> dense_mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const AttentionConfig& cfg, bool keep_probs = false);

/// Dense attention with per-head allowed-set masking. Deliberately simple and
/// serial: this is the oracle every faster path is checked against. Rows with
/// empty support produce a zero output row for that head.
template <typename T>
AttentionOutput<T> masked_dense_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const std::vector<HeadMask>& masks,
                                        const AttentionConfig& cfg, bool keep_probs = false);

/// Block-banded attention: per head and query, scores are computed only over
/// the contiguous allowed interval, so work and score memory are O(N * W_h)
/// per head instead of O(N^2). Queries are processed in tiles of `tile` rows
/// (speed knob only; results are independent of it). Parallel over heads and
/// query tiles; summation order within a row is fixed.
///
/// Throws UnsupportedMaskError if any interval leaves [0, i+1).
template <typename T>
AttentionOutput<T> banded_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  const std::vector<HeadMask>& masks, const AttentionConfig& cfg,
                                  BandedSaved<T>* saved = nullptr, int tile = 64);

/// Serial reference backward: per-row sweeps with no tiling, mirroring
/// masked_dense_forward. Shares its per-element arithmetic with
/// banded_backward, so the two agree bitwise; this is both the testing
/// oracle and the dense baseline the benchmark times.
template <typename T>
BandedGrads<T> masked_dense_backward(const Tensor<T>& grad_output, const Tensor<T>& q,
                                     const Tensor<T>& k, const Tensor<T>& v,
                                     const std::vector<HeadMask>& masks,
                                     const BandedSaved<T>& saved, const AttentionConfig& cfg);

/// Gradients of banded_forward given d(loss)/d(output). Requires the saved
/// probabilities from the forward call (StateError otherwise). Work is again
/// proportional to allowed pairs only, processed in cache-sized key chunks.
template <typename T>
BandedGrads<T> banded_backward(const Tensor<T>& grad_output, const Tensor<T>& q,
                               const Tensor<T>& k, const Tensor<T>& v,
                               const std::vector<HeadMask>& masks, const BandedSaved<T>& saved,
                               const AttentionConfig& cfg);

struct FlopsCount {
    std::uint64_t allowed_pairs = 0;
    std::uint64_t score_madds = 0;        // QK^T multiply-adds over allowed pairs
    std::uint64_t weighted_sum_madds = 0; // probability-weighted V accumulation
    std::uint64_t total = 0;
};

/// Exact multiply-add counts by enumerating allowed (query, key) pairs.
/// No flop estimates, no tolerance: the Standard/SPA total ratio equals H
/// identically because each causal pair appears once per head vs once total.
FlopsCount flops_count(const MaskVariant& variant, int seq_len, int num_heads, int d_k);

} // namespace spattn
