// SPDX-License-Identifier: Apache-2.0
#include "spattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spattn {

void AttentionConfig::validate() const {
    if (seq_len < 1) {
        throw ShapeError("seq_len must be >= 1, got " + std::to_string(seq_len));
    }
    if (num_heads < 1 || num_heads > seq_len) {
        throw ShapeError("num_heads must lie in [1, seq_len], got " + std::to_string(num_heads));
    }
    if (d_model < num_heads || d_model % num_heads != 0) {
        throw ShapeError("d_model " + std::to_string(d_model) + " not divisible by " +
                         std::to_string(num_heads) + " heads");
    }
}

namespace {

template <typename T>
void check_heads_tensor(const Tensor<T>& t, const AttentionConfig& cfg, const char* name) {
    const std::vector<int> want{cfg.num_heads, cfg.seq_len, cfg.d_k()};
    if (t.shape != want) {
        throw ShapeError(std::string(name) + " shape " + t.shape_str() + ", expected [" +
                         std::to_string(cfg.num_heads) + "x" + std::to_string(cfg.seq_len) + "x" +
                         std::to_string(cfg.d_k()) + "]");
    }
}

void check_masks(const std::vector<HeadMask>& masks, const AttentionConfig& cfg, bool causal_only) {
    if (static_cast<int>(masks.size()) != cfg.num_heads) {
        throw ShapeError("mask count " + std::to_string(masks.size()) + " vs " +
                         std::to_string(cfg.num_heads) + " heads");
    }
    for (const HeadMask& m : masks) {
        if (static_cast<int>(m.allowed.size()) != cfg.seq_len) {
            throw ShapeError("mask rows " + std::to_string(m.allowed.size()) + " vs seq_len " +
                             std::to_string(cfg.seq_len));
        }
        if (causal_only) {
            for (int i = 0; i < cfg.seq_len; ++i) {
                const KeyInterval iv = m.allowed[static_cast<std::size_t>(i)];
                if (!iv.empty() && (iv.begin < 0 || iv.end > i + 1)) {
                    throw UnsupportedMaskError("mask interval [" + std::to_string(iv.begin) + "," +
                                               std::to_string(iv.end) + ") at query " +
                                               std::to_string(i) + " is not causal-contiguous");
                }
            }
        }
    }
}

template <typename T>
const T* head_ptr(const Tensor<T>& t, int h, int seq_len, int d_k) {
    return t.data.data() + static_cast<std::size_t>(h) * seq_len * d_k;
}

template <typename T>
T* head_ptr(Tensor<T>& t, int h, int seq_len, int d_k) {
    return t.data.data() + static_cast<std::size_t>(h) * seq_len * d_k;
}

// The numeric primitives below are shared by the dense reference and the
// banded kernel and deliberately not inlined: one compiled body means both
// paths round identically, which the bitwise equivalence tests rely on.

template <typename T>
[[gnu::noinline]] T dot_n(const T* a, const T* b, int n) {
    T acc = 0;
    for (int d = 0; d < n; ++d) {
        acc += a[d] * b[d];
    }
    return acc;
}

template <typename T>
[[gnu::noinline]] void softmax_inplace(T* s, int n) {
    T mx = s[0];
    for (int j = 1; j < n; ++j) {
        mx = std::max(mx, s[j]);
    }
    T denom = 0;
    for (int j = 0; j < n; ++j) {
        s[j] = std::exp(s[j] - mx);
        denom += s[j];
    }
    for (int j = 0; j < n; ++j) {
        s[j] /= denom;
    }
}

/// out[0..d_k) += sum_j p[j] * V[first+j], j ascending.
template <typename T>
[[gnu::noinline]] void axpy_rows(const T* p, const T* vh, int first, int count, int d_k, T* out) {
    for (int j = 0; j < count; ++j) {
        const T w = p[j];
        const T* vrow = vh + static_cast<std::size_t>(first + j) * d_k;
        for (int d = 0; d < d_k; ++d) {
            out[d] += w * vrow[d];
        }
    }
}

/// Backward pre-pass over keys [b, e): dp_j = g . v_j stored at ds[j - base],
/// and acc accumulates p_j dp_j in ascending j.
template <typename T>
[[gnu::noinline]] void dp_rows(const T* grow, const T* vh, const T* p, T* ds, int base, int b,
                               int e, int d_k, T& acc) {
    for (int j = b; j < e; ++j) {
        const T dp = dot_n(grow, vh + static_cast<std::size_t>(j) * d_k, d_k);
        ds[j - base] = dp;
        acc += p[j - base] * dp;
    }
}

/// Backward scatter over keys [b, e) for one query row: accumulates dQ for
/// the row and dK/dV for each key, j ascending.
template <typename T>
[[gnu::noinline]] void scatter_rows(const T* ds, const T* p, int base, int b, int e,
                                    const T* qrow, const T* grow, const T* kh, T* dqrow, T* dkh,
                                    T* dvh, int d_k) {
    for (int j = b; j < e; ++j) {
        const T w = ds[j - base];
        const T pj = p[j - base];
        const T* krow = kh + static_cast<std::size_t>(j) * d_k;
        T* dkrow = dkh + static_cast<std::size_t>(j) * d_k;
        T* dvrow = dvh + static_cast<std::size_t>(j) * d_k;
        for (int d = 0; d < d_k; ++d) {
            dqrow[d] += w * krow[d];
            dkrow[d] += w * qrow[d];
            dvrow[d] += pj * grow[d];
        }
    }
}

template <typename T>
void weighted_rows(const T* p, const T* vh, int first, int count, int d_k, T* out) {
    std::fill(out, out + d_k, T(0));
    axpy_rows(p, vh, first, count, d_k, out);
}

template <typename T>
HeadProbs<T> make_probs_skeleton(const std::vector<KeyInterval>& support) {
    HeadProbs<T> hp;
    hp.support = support;
    hp.offsets.resize(support.size() + 1);
    hp.offsets[0] = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        hp.offsets[i + 1] = hp.offsets[i] + static_cast<std::size_t>(support[i].size());
    }
    hp.packed.assign(hp.offsets.back(), T(0));
    return hp;
}

std::vector<KeyInterval> causal_support(int seq_len) {
    std::vector<KeyInterval> s(static_cast<std::size_t>(seq_len));
    for (int i = 0; i < seq_len; ++i) {
        s[static_cast<std::size_t>(i)] = {0, i + 1};
    }
    return s;
}

// K/V rows are processed in chunks this many rows long so that one chunk
// (32 x 128 f32 = 16 KB) stays L1-resident while a whole query tile reuses
// it. Chunking only regroups iterations; per-element summation order is
// unchanged, so results do not depend on it.
constexpr int kKeyChunk = 32;

// Union of the non-empty intervals in rows [i0, i1); empty when none.
KeyInterval tile_key_range(const std::vector<KeyInterval>& support, int i0, int i1) {
    KeyInterval r{0, 0};
    bool seen = false;
    for (int i = i0; i < i1; ++i) {
        const KeyInterval iv = support[static_cast<std::size_t>(i)];
        if (iv.empty()) {
            continue;
        }
        r.begin = seen ? std::min(r.begin, iv.begin) : iv.begin;
        r.end = seen ? std::max(r.end, iv.end) : iv.end;
        seen = true;
    }
    return r;
}

} // namespace

template <typename T>
AttentionOutput<T> dense_mha_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                     const AttentionConfig& cfg, bool keep_probs) {
    cfg.validate();
    check_heads_tensor(q, cfg, "Q");
    check_heads_tensor(k, cfg, "K");
    check_heads_tensor(v, cfg, "V");
    const int n = cfg.seq_len, h_count = cfg.num_heads, dk = cfg.d_k();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    AttentionOutput<T> out;
    out.output = Tensor<T>({n, cfg.d_model});
    if (keep_probs) {
        out.probs.reserve(static_cast<std::size_t>(h_count));
    }
    std::vector<T> scores(static_cast<std::size_t>(n) * n); // the N x N buffer the banded path avoids
    for (int h = 0; h < h_count; ++h) {
        const T* qh = head_ptr(q, h, n, dk);
        const T* kh = head_ptr(k, h, n, dk);
        const T* vh = head_ptr(v, h, n, dk);
        HeadProbs<T> hp;
        if (keep_probs) {
            hp = make_probs_skeleton<T>(causal_support(n));
        }
        for (int i = 0; i < n; ++i) {
            T* srow = scores.data() + static_cast<std::size_t>(i) * n;
            const T* qrow = qh + static_cast<std::size_t>(i) * dk;
            for (int j = 0; j <= i; ++j) {
                srow[j] = scale * dot_n(qrow, kh + static_cast<std::size_t>(j) * dk, dk);
            }
            softmax_inplace(srow, i + 1);
            weighted_rows(srow, vh, 0, i + 1, dk,
                          out.output.row_ptr(i) + static_cast<std::size_t>(h) * dk);
            if (keep_probs) {
                std::copy(srow, srow + i + 1, hp.packed.data() + hp.offsets[static_cast<std::size_t>(i)]);
            }
        }
        if (keep_probs) {
            out.probs.push_back(std::move(hp));
        }
    }
    return out;
}

template <typename T>
AttentionOutput<T> masked_dense_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                        const std::vector<HeadMask>& masks,
                                        const AttentionConfig& cfg, bool keep_probs) {
    cfg.validate();
    check_heads_tensor(q, cfg, "Q");
    check_heads_tensor(k, cfg, "K");
    check_heads_tensor(v, cfg, "V");
    check_masks(masks, cfg, false);
    const int n = cfg.seq_len, h_count = cfg.num_heads, dk = cfg.d_k();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    AttentionOutput<T> out;
    out.output = Tensor<T>({n, cfg.d_model});
    std::vector<T> srow(static_cast<std::size_t>(n));
    for (int h = 0; h < h_count; ++h) {
        const HeadMask& m = masks[static_cast<std::size_t>(h)];
        const T* qh = head_ptr(q, h, n, dk);
        const T* kh = head_ptr(k, h, n, dk);
        const T* vh = head_ptr(v, h, n, dk);
        HeadProbs<T> hp;
        if (keep_probs) {
            hp = make_probs_skeleton<T>(m.allowed);
        }
        for (int i = 0; i < n; ++i) {
            const KeyInterval iv = m.allowed[static_cast<std::size_t>(i)];
            if (iv.empty()) {
                continue; // zero output row for this head, by convention
            }
            if (iv.begin < 0 || iv.end > n) {
                throw ShapeError("mask interval outside key range at query " + std::to_string(i));
            }
            const T* qrow = qh + static_cast<std::size_t>(i) * dk;
            for (int j = iv.begin; j < iv.end; ++j) {
                srow[j] = scale * dot_n(qrow, kh + static_cast<std::size_t>(j) * dk, dk);
            }
            softmax_inplace(srow.data() + iv.begin, iv.size());
            weighted_rows(srow.data() + iv.begin, vh, iv.begin, iv.size(), dk,
                          out.output.row_ptr(i) + static_cast<std::size_t>(h) * dk);
            if (keep_probs) {
                std::copy(srow.data() + iv.begin, srow.data() + iv.end,
                          hp.packed.data() + hp.offsets[static_cast<std::size_t>(i)]);
            }
        }
        if (keep_probs) {
            out.probs.push_back(std::move(hp));
        }
    }
    return out;
}

template <typename T>
AttentionOutput<T> banded_forward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  const std::vector<HeadMask>& masks, const AttentionConfig& cfg,
                                  BandedSaved<T>* saved, int tile) {
    cfg.validate();
    check_heads_tensor(q, cfg, "Q");
    check_heads_tensor(k, cfg, "K");
    check_heads_tensor(v, cfg, "V");
    check_masks(masks, cfg, true);
    if (tile < 1) {
        throw ShapeError("tile must be >= 1");
    }
    const int n = cfg.seq_len, h_count = cfg.num_heads, dk = cfg.d_k();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    AttentionOutput<T> out;
    out.output = Tensor<T>({n, cfg.d_model});

    // Scores live directly in the packed per-interval buffers, so the peak
    // score memory per head is exactly sum_i |interval_i| <= N * W_h.
    std::vector<HeadProbs<T>> probs(static_cast<std::size_t>(h_count));
    std::size_t peak = 0;
    for (int h = 0; h < h_count; ++h) {
        probs[static_cast<std::size_t>(h)] =
            make_probs_skeleton<T>(masks[static_cast<std::size_t>(h)].allowed);
        peak = std::max(peak, probs[static_cast<std::size_t>(h)].packed.size());
    }

    const int tiles_per_head = (n + tile - 1) / tile;
    const int work_items = h_count * tiles_per_head;
#pragma omp parallel for schedule(dynamic)
    for (int w = 0; w < work_items; ++w) {
        const int h = w / tiles_per_head;
        const int i0 = (w % tiles_per_head) * tile;
        const int i1 = std::min(i0 + tile, n);
        const T* qh = head_ptr(q, h, n, dk);
        const T* kh = head_ptr(k, h, n, dk);
        const T* vh = head_ptr(v, h, n, dk);
        HeadProbs<T>& hp = probs[static_cast<std::size_t>(h)];
        const KeyInterval range = tile_key_range(hp.support, i0, i1);

        // scores, one L1-sized K chunk at a time, reused across the tile
        for (int c0 = range.begin; c0 < range.end; c0 += kKeyChunk) {
            const int c1 = std::min(c0 + kKeyChunk, range.end);
            for (int i = i0; i < i1; ++i) {
                const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                const int b = std::max(iv.begin, c0), e = std::min(iv.end, c1);
                if (b >= e) {
                    continue;
                }
                T* prow = hp.packed.data() + hp.offsets[static_cast<std::size_t>(i)];
                const T* qrow = qh + static_cast<std::size_t>(i) * dk;
                for (int j = b; j < e; ++j) {
                    prow[j - iv.begin] =
                        scale * dot_n(qrow, kh + static_cast<std::size_t>(j) * dk, dk);
                }
            }
        }
        for (int i = i0; i < i1; ++i) {
            const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
            if (!iv.empty()) {
                softmax_inplace(hp.packed.data() + hp.offsets[static_cast<std::size_t>(i)],
                                iv.size());
            }
        }
        // weighted sum into the zero-initialized output, same V chunking
        for (int c0 = range.begin; c0 < range.end; c0 += kKeyChunk) {
            const int c1 = std::min(c0 + kKeyChunk, range.end);
            for (int i = i0; i < i1; ++i) {
                const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                const int b = std::max(iv.begin, c0), e = std::min(iv.end, c1);
                if (b >= e) {
                    continue;
                }
                const T* prow = hp.packed.data() + hp.offsets[static_cast<std::size_t>(i)];
                axpy_rows(prow + (b - iv.begin), vh, b, e - b, dk,
                          out.output.row_ptr(i) + static_cast<std::size_t>(h) * dk);
            }
        }
    }

    if (saved) {
        saved->probs = std::move(probs);
        saved->peak_score_elems = peak;
        saved->valid = true;
    }
    return out;
}

namespace {

template <typename T>
void check_backward_args(const Tensor<T>& grad_output, const Tensor<T>& q, const Tensor<T>& k,
                         const Tensor<T>& v, const std::vector<HeadMask>& masks,
                         const BandedSaved<T>& saved, const AttentionConfig& cfg) {
    cfg.validate();
    check_heads_tensor(q, cfg, "Q");
    check_heads_tensor(k, cfg, "K");
    check_heads_tensor(v, cfg, "V");
    check_masks(masks, cfg, true);
    if (!saved.valid || static_cast<int>(saved.probs.size()) != cfg.num_heads) {
        throw StateError("attention backward called without saved forward activations");
    }
    const std::vector<int> want{cfg.seq_len, cfg.d_model};
    if (grad_output.shape != want) {
        throw ShapeError("grad_output shape " + grad_output.shape_str());
    }
    for (int h = 0; h < cfg.num_heads; ++h) {
        const HeadProbs<T>& hp = saved.probs[static_cast<std::size_t>(h)];
        if (static_cast<int>(hp.support.size()) != cfg.seq_len ||
            hp.support != masks[static_cast<std::size_t>(h)].allowed) {
            throw StateError("saved activations do not match the given masks");
        }
    }
}

} // namespace

template <typename T>
BandedGrads<T> masked_dense_backward(const Tensor<T>& grad_output, const Tensor<T>& q,
                                     const Tensor<T>& k, const Tensor<T>& v,
                                     const std::vector<HeadMask>& masks,
                                     const BandedSaved<T>& saved, const AttentionConfig& cfg) {
    check_backward_args(grad_output, q, k, v, masks, saved, cfg);
    const int n = cfg.seq_len, h_count = cfg.num_heads, dk = cfg.d_k();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    BandedGrads<T> g;
    g.dq = Tensor<T>({h_count, n, dk});
    g.dk = Tensor<T>({h_count, n, dk});
    g.dv = Tensor<T>({h_count, n, dk});

    std::vector<T> ds; // d(loss)/d(score) for one row
    for (int h = 0; h < h_count; ++h) {
        const HeadProbs<T>& hp = saved.probs[static_cast<std::size_t>(h)];
        const T* qh = head_ptr(q, h, n, dk);
        const T* kh = head_ptr(k, h, n, dk);
        const T* vh = head_ptr(v, h, n, dk);
        T* dqh = head_ptr(g.dq, h, n, dk);
        T* dkh = head_ptr(g.dk, h, n, dk);
        T* dvh = head_ptr(g.dv, h, n, dk);
        for (int i = 0; i < n; ++i) {
            const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
            if (iv.empty()) {
                continue;
            }
            const T* prow = hp.row(i);
            const T* grow = grad_output.row_ptr(i) + static_cast<std::size_t>(h) * dk;
            ds.assign(static_cast<std::size_t>(iv.size()), T(0));
            T dot_p_dp = 0;
            dp_rows(grow, vh, prow, ds.data(), iv.begin, iv.begin, iv.end, dk, dot_p_dp);
            for (int j = 0; j < iv.size(); ++j) {
                ds[static_cast<std::size_t>(j)] =
                    prow[j] * (ds[static_cast<std::size_t>(j)] - dot_p_dp) * scale;
            }
            scatter_rows(ds.data(), prow, iv.begin, iv.begin, iv.end,
                         qh + static_cast<std::size_t>(i) * dk, grow, kh,
                         dqh + static_cast<std::size_t>(i) * dk, dkh, dvh, dk);
        }
    }
    return g;
}

template <typename T>
BandedGrads<T> banded_backward(const Tensor<T>& grad_output, const Tensor<T>& q,
                               const Tensor<T>& k, const Tensor<T>& v,
                               const std::vector<HeadMask>& masks, const BandedSaved<T>& saved,
                               const AttentionConfig& cfg) {
    check_backward_args(grad_output, q, k, v, masks, saved, cfg);
    const int n = cfg.seq_len, h_count = cfg.num_heads, dk = cfg.d_k();
    const T scale = T(1) / std::sqrt(static_cast<T>(dk));

    BandedGrads<T> g;
    g.dq = Tensor<T>({h_count, n, dk});
    g.dk = Tensor<T>({h_count, n, dk});
    g.dv = Tensor<T>({h_count, n, dk});

    // Heads are independent; within a head, query tiles run serially and the
    // key/value gradient scatter sees queries in ascending order, so results
    // do not depend on the thread count. K/V-side rows are chunked exactly
    // like the forward pass to keep one chunk L1-resident per tile.
    constexpr int kQueryTile = 64;
#pragma omp parallel for schedule(dynamic)
    for (int h = 0; h < h_count; ++h) {
        const HeadProbs<T>& hp = saved.probs[static_cast<std::size_t>(h)];
        const T* qh = head_ptr(q, h, n, dk);
        const T* kh = head_ptr(k, h, n, dk);
        const T* vh = head_ptr(v, h, n, dk);
        T* dqh = head_ptr(g.dq, h, n, dk);
        T* dkh = head_ptr(g.dk, h, n, dk);
        T* dvh = head_ptr(g.dv, h, n, dk);
        std::vector<T> ds;                    // d(loss)/d(score), packed per tile
        std::vector<std::size_t> ds_off(kQueryTile + 1);
        std::vector<T> pdp(kQueryTile);       // per-row sum_j p_j dp_j
        for (int i0 = 0; i0 < n; i0 += kQueryTile) {
            const int i1 = std::min(i0 + kQueryTile, n);
            ds_off[0] = 0;
            for (int i = i0; i < i1; ++i) {
                const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                ds_off[static_cast<std::size_t>(i - i0 + 1)] =
                    ds_off[static_cast<std::size_t>(i - i0)] +
                    static_cast<std::size_t>(iv.empty() ? 0 : iv.size());
            }
            const KeyInterval range = tile_key_range(hp.support, i0, i1);
            if (range.empty()) {
                continue;
            }
            ds.assign(ds_off[static_cast<std::size_t>(i1 - i0)], T(0));
            std::fill(pdp.begin(), pdp.end(), T(0));

            // dp_j = g . v_j, chunked over V rows; dot_p_dp accumulates in
            // ascending j per row just like an unchunked sweep
            for (int c0 = range.begin; c0 < range.end; c0 += kKeyChunk) {
                const int c1 = std::min(c0 + kKeyChunk, range.end);
                for (int i = i0; i < i1; ++i) {
                    const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                    const int b = std::max(iv.begin, c0), e = std::min(iv.end, c1);
                    if (b >= e) {
                        continue;
                    }
                    const T* grow = grad_output.row_ptr(i) + static_cast<std::size_t>(h) * dk;
                    dp_rows(grow, vh, hp.row(i), ds.data() + ds_off[static_cast<std::size_t>(i - i0)],
                            iv.begin, b, e, dk, pdp[static_cast<std::size_t>(i - i0)]);
                }
            }
            // ds_j = p_j (dp_j - sum_k p_k dp_k) * scale
            for (int i = i0; i < i1; ++i) {
                const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                if (iv.empty()) {
                    continue;
                }
                const T* prow = hp.row(i);
                T* dsrow = ds.data() + ds_off[static_cast<std::size_t>(i - i0)];
                const T dot_p_dp = pdp[static_cast<std::size_t>(i - i0)];
                for (int j = 0; j < iv.size(); ++j) {
                    dsrow[j] = prow[j] * (dsrow[j] - dot_p_dp) * scale;
                }
            }
            // scatter, chunked the same way
            for (int c0 = range.begin; c0 < range.end; c0 += kKeyChunk) {
                const int c1 = std::min(c0 + kKeyChunk, range.end);
                for (int i = i0; i < i1; ++i) {
                    const KeyInterval iv = hp.support[static_cast<std::size_t>(i)];
                    const int b = std::max(iv.begin, c0), e = std::min(iv.end, c1);
                    if (b >= e) {
                        continue;
                    }
                    const T* grow = grad_output.row_ptr(i) + static_cast<std::size_t>(h) * dk;
                    scatter_rows(ds.data() + ds_off[static_cast<std::size_t>(i - i0)], hp.row(i),
                                 iv.begin, b, e, qh + static_cast<std::size_t>(i) * dk, grow, kh,
                                 dqh + static_cast<std::size_t>(i) * dk, dkh, dvh, dk);
                }
            }
        }
    }
    return g;
}

FlopsCount flops_count(const MaskVariant& variant, int seq_len, int num_heads, int d_k) {
    if (d_k < 1) {
        throw ShapeError("d_k must be >= 1");
    }
    const BandPartition p = variant.kind == MaskKind::EBALL ? eball_partition(seq_len, num_heads)
                                                            : compute_partition(seq_len, num_heads);
    const PairCount pc = pair_count(build_mask(p, variant));
    FlopsCount f;
    f.allowed_pairs = pc.total;
    f.score_madds = pc.total * static_cast<std::uint64_t>(d_k);
    f.weighted_sum_madds = pc.total * static_cast<std::uint64_t>(d_k);
    f.total = f.score_madds + f.weighted_sum_madds;
    return f;
}

template AttentionOutput<float> dense_mha_forward<float>(const Tensor<float>&, const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const AttentionConfig&, bool);
template AttentionOutput<double> dense_mha_forward<double>(const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const AttentionConfig&, bool);
template AttentionOutput<float> masked_dense_forward<float>(const Tensor<float>&,
                                                            const Tensor<float>&,
                                                            const Tensor<float>&,
                                                            const std::vector<HeadMask>&,
                                                            const AttentionConfig&, bool);
template AttentionOutput<double> masked_dense_forward<double>(const Tensor<double>&,
                                                              const Tensor<double>&,
                                                              const Tensor<double>&,
                                                              const std::vector<HeadMask>&,
                                                              const AttentionConfig&, bool);
template AttentionOutput<float> banded_forward<float>(const Tensor<float>&, const Tensor<float>&,
                                                      const Tensor<float>&,
                                                      const std::vector<HeadMask>&,
                                                      const AttentionConfig&, BandedSaved<float>*,
                                                      int);
template AttentionOutput<double> banded_forward<double>(const Tensor<double>&,
                                                        const Tensor<double>&,
                                                        const Tensor<double>&,
                                                        const std::vector<HeadMask>&,
                                                        const AttentionConfig&,
                                                        BandedSaved<double>*, int);
template BandedGrads<float> masked_dense_backward<float>(const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const Tensor<float>&,
                                                         const std::vector<HeadMask>&,
                                                         const BandedSaved<float>&,
                                                         const AttentionConfig&);
template BandedGrads<double> masked_dense_backward<double>(const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const Tensor<double>&,
                                                           const std::vector<HeadMask>&,
                                                           const BandedSaved<double>&,
                                                           const AttentionConfig&);
template BandedGrads<float> banded_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                                   const Tensor<float>&, const Tensor<float>&,
                                                   const std::vector<HeadMask>&,
                                                   const BandedSaved<float>&,
                                                   const AttentionConfig&);
template BandedGrads<double> banded_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                     const Tensor<double>&, const Tensor<double>&,
                                                     const std::vector<HeadMask>&,
                                                     const BandedSaved<double>&,
                                                     const AttentionConfig&);

} // namespace spattn
