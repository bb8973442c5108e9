// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/attention.hpp"
#include "spattn/tape.hpp"

#include <memory>
#include <vector>

namespace spattn {

/// Extract batch item `b` from stacked activations [B*N x d_model] and
/// permute to the per-head layout [H x N x d_k] the kernels use.
template <typename T>
typename Tape<T>::VarId split_heads(Tape<T>& tape, typename Tape<T>::VarId x, int b, int batch,
                                    int seq_len, int num_heads, int d_k) {
    const Tensor<T>& tx = tape.value(x);
    const int d_model = num_heads * d_k;
    if (tx.shape != std::vector<int>{batch * seq_len, d_model}) {
        throw ShapeError("split_heads input " + tx.shape_str());
    }
    if (b < 0 || b >= batch) {
        throw ShapeError("batch index out of range");
    }
    Tensor<T> out({num_heads, seq_len, d_k});
    for (int h = 0; h < num_heads; ++h) {
        for (int i = 0; i < seq_len; ++i) {
            const T* src = tx.row_ptr(b * seq_len + i) + static_cast<std::size_t>(h) * d_k;
            T* dst = out.data.data() +
                     (static_cast<std::size_t>(h) * seq_len + static_cast<std::size_t>(i)) * d_k;
            std::copy(src, src + d_k, dst);
        }
    }
    return tape.push(std::move(out), [x, b, seq_len, num_heads, d_k, d_model](Tape<T>& t,
                                                                              typename Tape<T>::VarId self) {
        const std::vector<T>& go = t.grad_buffer(self);
        std::vector<T>& gx = t.grad_buffer(x);
        for (int h = 0; h < num_heads; ++h) {
            for (int i = 0; i < seq_len; ++i) {
                const T* src = go.data() +
                               (static_cast<std::size_t>(h) * seq_len + static_cast<std::size_t>(i)) * d_k;
                T* dst = gx.data() +
                         static_cast<std::size_t>(b * seq_len + i) * d_model +
                         static_cast<std::size_t>(h) * d_k;
                for (int d = 0; d < d_k; ++d) {
                    dst[d] += src[d];
                }
            }
        }
    });
}

/// Fused banded attention as one tape node: forward runs the block-banded
/// kernel and keeps its packed probabilities; backward replays them through
/// banded_backward. Q, K, V nodes hold [H x N x d_k] values.
template <typename T>
typename Tape<T>::VarId banded_attention(Tape<T>& tape, typename Tape<T>::VarId q,
                                         typename Tape<T>::VarId k, typename Tape<T>::VarId v,
                                         std::shared_ptr<const std::vector<HeadMask>> masks,
                                         const AttentionConfig& cfg) {
    auto saved = std::make_shared<BandedSaved<T>>();
    AttentionOutput<T> out =
        banded_forward(tape.value(q), tape.value(k), tape.value(v), *masks, cfg, saved.get());
    return tape.push(std::move(out.output),
                     [q, k, v, masks, saved, cfg](Tape<T>& t, typename Tape<T>::VarId self) {
                         const std::vector<T>& go = t.grad_buffer(self);
                         Tensor<T> gout({cfg.seq_len, cfg.d_model});
                         gout.data = go;
                         BandedGrads<T> g = banded_backward(gout, t.value(q), t.value(k),
                                                            t.value(v), *masks, *saved, cfg);
                         auto accum = [](const std::vector<T>& src, std::vector<T>& dst) {
                             for (std::size_t i = 0; i < src.size(); ++i) {
                                 dst[i] += src[i];
                             }
                         };
                         accum(g.dq.data, t.grad_buffer(q));
                         accum(g.dk.data, t.grad_buffer(k));
                         accum(g.dv.data, t.grad_buffer(v));
                     });
}

/// Stack B per-item [N x d] blocks back into [B*N x d] row order.
template <typename T>
typename Tape<T>::VarId merge_rows(Tape<T>& tape, const std::vector<typename Tape<T>::VarId>& parts) {
    if (parts.empty()) {
        throw ShapeError("merge_rows needs at least one block");
    }
    const Tensor<T>& first = tape.value(parts[0]);
    if (first.shape.size() != 2) {
        throw ShapeError("merge_rows blocks must be 2-d");
    }
    const int n = first.shape[0], d = first.shape[1];
    for (auto id : parts) {
        if (tape.value(id).shape != first.shape) {
            throw ShapeError("merge_rows blocks disagree in shape");
        }
    }
    const int batch = static_cast<int>(parts.size());
    Tensor<T> out({batch * n, d});
    for (int b = 0; b < batch; ++b) {
        const Tensor<T>& blk = tape.value(parts[static_cast<std::size_t>(b)]);
        std::copy(blk.data.begin(), blk.data.end(),
                  out.data.begin() + static_cast<std::size_t>(b) * blk.size());
    }
    auto ids = std::make_shared<std::vector<typename Tape<T>::VarId>>(parts);
    return tape.push(std::move(out), [ids, n, d](Tape<T>& t, typename Tape<T>::VarId self) {
        const std::vector<T>& go = t.grad_buffer(self);
        const std::size_t block = static_cast<std::size_t>(n) * d;
        for (std::size_t b = 0; b < ids->size(); ++b) {
            std::vector<T>& g = t.grad_buffer((*ids)[b]);
            const T* src = go.data() + b * block;
            for (std::size_t i = 0; i < block; ++i) {
                g[i] += src[i];
            }
        }
    });
}

} // namespace spattn
