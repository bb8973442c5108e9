// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spattn/band_partition.hpp"
#include "spattn/errors.hpp"
#include "spattn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace spattn {

// Low-level matmul kernels shared by the tape ops and the attention code.
// Loop orders are chosen so the innermost loop walks contiguous memory and
// vectorizes; accumulation order is fixed, so results are bit-reproducible.

/// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void gemm_accum_nn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        T* crow = c + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            const T* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// C[m x k] += A[m x n] * B^T where B is [k x n]
template <typename T>
void gemm_accum_nt(const T* a, const T* b, T* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * n;
        T* crow = c + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const T* brow = b + static_cast<std::size_t>(kk) * n;
            T acc = 0;
            for (int j = 0; j < n; ++j) {
                acc += arow[j] * brow[j];
            }
            crow[kk] += acc;
        }
    }
}

/// C[k x n] += A^T * B where A is [m x k], B is [m x n]
template <typename T>
void gemm_accum_tn(const T* a, const T* b, T* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const T* arow = a + static_cast<std::size_t>(i) * k;
        const T* brow = b + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const T aik = arow[kk];
            T* crow = c + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
}

/// Reverse-mode tape. Records a DAG of tensor ops during the forward pass and
/// replays registered closures in reverse on backward(). A tape instance is
/// single-use per step: build graph, call backward once, read gradients.
///
/// Determinism contract: op order and every accumulation order inside an op
/// are fixed, so two runs over identical inputs produce identical bits.
template <typename T>
class Tape {
  public:
    using VarId = int;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Record an input tensor. All leaves get gradient storage on backward().
    VarId leaf(Tensor<T> value) { return push(std::move(value), nullptr); }

    /// Extension point for fused ops: record a value plus a closure that
    /// reads grad(out) and accumulates into grad_buffer(input) entries.
    VarId push(Tensor<T> value, std::function<void(Tape&, VarId)> backprop) {
        nodes_.push_back(Node{std::move(value), {}, std::move(backprop)});
        return static_cast<VarId>(nodes_.size()) - 1;
    }

    const Tensor<T>& value(VarId id) const { return at(id).value; }
    Tensor<T>& value(VarId id) { return at(id).value; }

    /// Gradient of the scalar loss w.r.t. this node; valid after backward().
    const std::vector<T>& grad(VarId id) const {
        const Node& n = at(id);
        if (n.grad.empty()) {
            throw StateError("gradient read before backward()");
        }
        return n.grad;
    }

    /// Mutable gradient accumulator, for use inside backprop closures.
    std::vector<T>& grad_buffer(VarId id) { return at(id).grad; }

    std::size_t num_nodes() const { return nodes_.size(); }

    /// Seeds d(out)/d(out) = 1 and sweeps the tape in reverse. `out` must be
    /// a scalar (shape [1]).
    void backward(VarId out) {
        if (ran_backward_) {
            throw StateError("backward() called twice on one tape");
        }
        if (at(out).value.size() != 1) {
            throw ShapeError("backward() target is not a scalar: " + at(out).value.shape_str());
        }
        ran_backward_ = true;
        for (Node& n : nodes_) {
            n.grad.assign(n.value.size(), T(0));
        }
        nodes_[static_cast<std::size_t>(out)].grad[0] = T(1);
        for (VarId id = out; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (n.backprop) {
                n.backprop(*this, id);
            }
        }
    }

    // ---- ops ------------------------------------------------------------

    /// [m x k] * [k x n] -> [m x n]
    VarId matmul(VarId a, VarId b) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(b);
        require_2d(ta, "matmul lhs");
        require_2d(tb, "matmul rhs");
        const int m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
        if (tb.shape[0] != k) {
            throw ShapeError("matmul inner dims " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor<T> out({m, n});
        gemm_accum_nn(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
        return push(std::move(out), [a, b, m, k, n](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            gemm_accum_nt(go.data(), t.value(b).data.data(), t.grad_buffer(a).data(), m, n, k);
            gemm_accum_tn(t.value(a).data.data(), go.data(), t.grad_buffer(b).data(), m, k, n);
        });
    }

    /// Elementwise sum of two same-shape tensors.
    VarId add(VarId a, VarId b) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(b);
        if (!ta.same_shape(tb)) {
            throw ShapeError("add shapes " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor<T> out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.data[i] += tb.data[i];
        }
        return push(std::move(out), [a, b](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            axpy(go, t.grad_buffer(a));
            axpy(go, t.grad_buffer(b));
        });
    }

    /// [m x n] + [n], bias broadcast over rows.
    VarId add_bias(VarId a, VarId bias) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(bias);
        require_2d(ta, "add_bias input");
        const int m = ta.shape[0], n = ta.shape[1];
        if (static_cast<int>(tb.size()) != n) {
            throw ShapeError("bias length " + tb.shape_str() + " vs cols " + std::to_string(n));
        }
        Tensor<T> out = ta;
        for (int i = 0; i < m; ++i) {
            T* row = out.row_ptr(i);
            for (int j = 0; j < n; ++j) {
                row[j] += tb.data[j];
            }
        }
        return push(std::move(out), [a, bias, m, n](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            axpy(go, t.grad_buffer(a));
            std::vector<T>& gb = t.grad_buffer(bias);
            for (int i = 0; i < m; ++i) {
                const T* row = go.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) {
                    gb[j] += row[j];
                }
            }
        });
    }

    /// y[r] = x[r] + table[r mod P]; x has B*P rows. Used for learned
    /// position embeddings applied to a batch of stacked sequences.
    VarId add_rows_tiled(VarId x, VarId table) {
        const Tensor<T>& tx = value(x);
        const Tensor<T>& tt = value(table);
        require_2d(tx, "add_rows_tiled input");
        require_2d(tt, "add_rows_tiled table");
        const int rows = tx.shape[0], n = tx.shape[1], period = tt.shape[0];
        if (tt.shape[1] != n || rows % period != 0) {
            throw ShapeError("add_rows_tiled " + tx.shape_str() + " vs table " + tt.shape_str());
        }
        Tensor<T> out = tx;
        for (int r = 0; r < rows; ++r) {
            T* row = out.row_ptr(r);
            const T* trow = tt.row_ptr(r % period);
            for (int j = 0; j < n; ++j) {
                row[j] += trow[j];
            }
        }
        return push(std::move(out), [x, table, rows, n, period](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            axpy(go, t.grad_buffer(x));
            std::vector<T>& gt = t.grad_buffer(table);
            for (int r = 0; r < rows; ++r) {
                const T* row = go.data() + static_cast<std::size_t>(r) * n;
                T* trow = gt.data() + static_cast<std::size_t>(r % period) * n;
                for (int j = 0; j < n; ++j) {
                    trow[j] += row[j];
                }
            }
        });
    }

    VarId scale(VarId a, T c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) {
            v *= c;
        }
        return push(std::move(out), [a, c](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            std::vector<T>& ga = t.grad_buffer(a);
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += c * go[i];
            }
        });
    }

    /// Elementwise product.
    VarId mul(VarId a, VarId b) {
        const Tensor<T>& ta = value(a);
        const Tensor<T>& tb = value(b);
        if (!ta.same_shape(tb)) {
            throw ShapeError("mul shapes " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor<T> out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out.data[i] *= tb.data[i];
        }
        return push(std::move(out), [a, b](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            const std::vector<T>& va = t.value(a).data;
            const std::vector<T>& vb = t.value(b).data;
            std::vector<T>& ga = t.grad_buffer(a);
            std::vector<T>& gb = t.grad_buffer(b);
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i] * vb[i];
                gb[i] += go[i] * va[i];
            }
        });
    }

    VarId transpose(VarId a) {
        const Tensor<T>& ta = value(a);
        require_2d(ta, "transpose input");
        const int m = ta.shape[0], n = ta.shape[1];
        Tensor<T> out({n, m});
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                out.data[static_cast<std::size_t>(j) * m + i] = ta(i, j);
            }
        }
        return push(std::move(out), [a, m, n](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            std::vector<T>& ga = t.grad_buffer(a);
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    ga[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
                }
            }
        });
    }

    /// Reduce all elements to a scalar.
    VarId sum(VarId a) {
        const Tensor<T>& ta = value(a);
        T acc = 0;
        for (T v : ta.data) {
            acc += v;
        }
        return push(Tensor<T>::scalar(acc), [a](Tape& t, VarId self) {
            const T g = t.grad_buffer(self)[0];
            for (T& v : t.grad_buffer(a)) {
                v += g;
            }
        });
    }

    /// Gather rows of `table` by index; backward scatters into the table.
    VarId embedding_lookup(VarId table, std::vector<int> ids) {
        const Tensor<T>& tt = value(table);
        require_2d(tt, "embedding table");
        const int vocab = tt.shape[0], n = tt.shape[1];
        for (int id : ids) {
            if (id < 0 || id >= vocab) {
                throw ShapeError("embedding index " + std::to_string(id) + " out of range [0," +
                                 std::to_string(vocab) + ")");
            }
        }
        const int rows = static_cast<int>(ids.size());
        Tensor<T> out({rows, n});
        for (int r = 0; r < rows; ++r) {
            const T* src = tt.row_ptr(ids[static_cast<std::size_t>(r)]);
            std::copy(src, src + n, out.row_ptr(r));
        }
        auto ids_ptr = std::make_shared<std::vector<int>>(std::move(ids));
        return push(std::move(out), [table, ids_ptr, n](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            std::vector<T>& gt = t.grad_buffer(table);
            for (std::size_t r = 0; r < ids_ptr->size(); ++r) {
                const T* row = go.data() + r * n;
                T* trow = gt.data() + static_cast<std::size_t>((*ids_ptr)[r]) * n;
                for (int j = 0; j < n; ++j) {
                    trow[j] += row[j];
                }
            }
        });
    }

    /// Row-wise layer norm with affine parameters, variance epsilon 1e-5.
    VarId layer_norm(VarId x, VarId gamma, VarId beta) {
        const Tensor<T>& tx = value(x);
        require_2d(tx, "layer_norm input");
        const int m = tx.shape[0], n = tx.shape[1];
        if (static_cast<int>(value(gamma).size()) != n || static_cast<int>(value(beta).size()) != n) {
            throw ShapeError("layer_norm affine params must have length " + std::to_string(n));
        }
        const T eps = static_cast<T>(1e-5);
        Tensor<T> out({m, n});
        auto inv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
        auto xhat = std::make_shared<std::vector<T>>(tx.size());
        const std::vector<T>& g = value(gamma).data;
        const std::vector<T>& b = value(beta).data;
        for (int i = 0; i < m; ++i) {
            const T* row = tx.row_ptr(i);
            T mu = 0;
            for (int j = 0; j < n; ++j) {
                mu += row[j];
            }
            mu /= static_cast<T>(n);
            T var = 0;
            for (int j = 0; j < n; ++j) {
                const T d = row[j] - mu;
                var += d * d;
            }
            var /= static_cast<T>(n);
            const T iv = T(1) / std::sqrt(var + eps);
            (*inv)[static_cast<std::size_t>(i)] = iv;
            T* xh = xhat->data() + static_cast<std::size_t>(i) * n;
            T* orow = out.row_ptr(i);
            for (int j = 0; j < n; ++j) {
                xh[j] = (row[j] - mu) * iv;
                orow[j] = xh[j] * g[j] + b[j];
            }
        }
        return push(std::move(out), [x, gamma, beta, m, n, inv, xhat](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            const std::vector<T>& g = t.value(gamma).data;
            std::vector<T>& gx = t.grad_buffer(x);
            std::vector<T>& gg = t.grad_buffer(gamma);
            std::vector<T>& gb = t.grad_buffer(beta);
            for (int i = 0; i < m; ++i) {
                const T* row = go.data() + static_cast<std::size_t>(i) * n;
                const T* xh = xhat->data() + static_cast<std::size_t>(i) * n;
                T* gxr = gx.data() + static_cast<std::size_t>(i) * n;
                T mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (int j = 0; j < n; ++j) {
                    const T dxh = row[j] * g[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xh[j];
                    gg[j] += row[j] * xh[j];
                    gb[j] += row[j];
                }
                mean_dxhat /= static_cast<T>(n);
                mean_dxhat_xhat /= static_cast<T>(n);
                const T iv = (*inv)[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) {
                    const T dxh = row[j] * g[j];
                    gxr[j] += iv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                }
            }
        });
    }

    /// Exact (erf-based) GELU.
    VarId gelu(VarId x) {
        const Tensor<T>& tx = value(x);
        Tensor<T> out = tx;
        for (T& v : out.data) {
            v = static_cast<T>(0.5) * v * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
        }
        return push(std::move(out), [x](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            const std::vector<T>& vx = t.value(x).data;
            std::vector<T>& gx = t.grad_buffer(x);
            const T inv_sqrt2pi = static_cast<T>(0.3989422804014326779);
            for (std::size_t i = 0; i < go.size(); ++i) {
                const T v = vx[i];
                const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
                const T pdf = inv_sqrt2pi * std::exp(static_cast<T>(-0.5) * v * v);
                gx[i] += go[i] * (cdf + v * pdf);
            }
        });
    }

    /// Softmax of each row restricted to a per-row key interval. Entries
    /// outside the interval become exactly zero; an empty interval yields an
    /// all-zero row. Non-finite scores inside a support raise NumericError.
    VarId masked_softmax_rows(VarId scores, std::vector<KeyInterval> support) {
        const Tensor<T>& ts = value(scores);
        require_2d(ts, "masked_softmax_rows input");
        const int m = ts.shape[0], n = ts.shape[1];
        if (static_cast<int>(support.size()) != m) {
            throw ShapeError("support rows " + std::to_string(support.size()) + " vs " +
                             std::to_string(m));
        }
        for (const KeyInterval& iv : support) {
            if (!iv.empty() && (iv.begin < 0 || iv.end > n)) {
                throw ShapeError("support interval outside [0," + std::to_string(n) + ")");
            }
        }
        Tensor<T> out({m, n});
        for (int i = 0; i < m; ++i) {
            const KeyInterval iv = support[static_cast<std::size_t>(i)];
            if (iv.empty()) {
                continue;
            }
            const T* row = ts.row_ptr(i);
            T mx = row[iv.begin];
            for (int j = iv.begin; j < iv.end; ++j) {
                if (!std::isfinite(static_cast<double>(row[j]))) {
                    throw NumericError("non-finite attention score at row " + std::to_string(i));
                }
                mx = std::max(mx, row[j]);
            }
            T denom = 0;
            T* orow = out.row_ptr(i);
            for (int j = iv.begin; j < iv.end; ++j) {
                orow[j] = std::exp(row[j] - mx);
                denom += orow[j];
            }
            for (int j = iv.begin; j < iv.end; ++j) {
                orow[j] /= denom;
            }
        }
        auto sup = std::make_shared<std::vector<KeyInterval>>(std::move(support));
        return push(std::move(out), [scores, sup, n](Tape& t, VarId self) {
            const std::vector<T>& go = t.grad_buffer(self);
            const std::vector<T>& p = t.value(self).data;
            std::vector<T>& gs = t.grad_buffer(scores);
            for (std::size_t i = 0; i < sup->size(); ++i) {
                const KeyInterval iv = (*sup)[i];
                if (iv.empty()) {
                    continue;
                }
                const T* prow = p.data() + i * n;
                const T* grow = go.data() + i * n;
                T dot = 0;
                for (int j = iv.begin; j < iv.end; ++j) {
                    dot += prow[j] * grow[j];
                }
                T* gsrow = gs.data() + i * n;
                for (int j = iv.begin; j < iv.end; ++j) {
                    gsrow[j] += prow[j] * (grow[j] - dot);
                }
            }
        });
    }

    /// Mean cross-entropy over rows of logits, computed via a stable
    /// log-sum-exp. Raises NumericError if the result is not finite.
    VarId cross_entropy_loss(VarId logits, std::vector<int> targets) {
        const Tensor<T>& tl = value(logits);
        require_2d(tl, "cross_entropy logits");
        const int rows = tl.shape[0], vocab = tl.shape[1];
        if (static_cast<int>(targets.size()) != rows) {
            throw ShapeError("target count " + std::to_string(targets.size()) + " vs rows " +
                             std::to_string(rows));
        }
        for (int tgt : targets) {
            if (tgt < 0 || tgt >= vocab) {
                throw ShapeError("target index " + std::to_string(tgt) + " out of range");
            }
        }
        auto probs = std::make_shared<std::vector<T>>(tl.size());
        T loss = 0;
        for (int r = 0; r < rows; ++r) {
            const T* row = tl.row_ptr(r);
            T mx = row[0];
            for (int j = 1; j < vocab; ++j) {
                mx = std::max(mx, row[j]);
            }
            T denom = 0;
            T* prow = probs->data() + static_cast<std::size_t>(r) * vocab;
            for (int j = 0; j < vocab; ++j) {
                prow[j] = std::exp(row[j] - mx);
                denom += prow[j];
            }
            for (int j = 0; j < vocab; ++j) {
                prow[j] /= denom;
            }
            loss += mx + std::log(denom) - row[targets[static_cast<std::size_t>(r)]];
        }
        loss /= static_cast<T>(rows);
        if (!std::isfinite(static_cast<double>(loss))) {
            throw NumericError("non-finite cross-entropy loss");
        }
        auto tgt_ptr = std::make_shared<std::vector<int>>(std::move(targets));
        return push(Tensor<T>::scalar(loss), [logits, probs, tgt_ptr, rows, vocab](Tape& t, VarId self) {
            const T g = t.grad_buffer(self)[0] / static_cast<T>(rows);
            std::vector<T>& gl = t.grad_buffer(logits);
            for (int r = 0; r < rows; ++r) {
                const T* prow = probs->data() + static_cast<std::size_t>(r) * vocab;
                T* grow = gl.data() + static_cast<std::size_t>(r) * vocab;
                for (int j = 0; j < vocab; ++j) {
                    grow[j] += g * prow[j];
                }
                grow[(*tgt_ptr)[static_cast<std::size_t>(r)]] -= g;
            }
        });
    }

  private:
    struct Node {
        Tensor<T> value;
        std::vector<T> grad;
        std::function<void(Tape&, VarId)> backprop;
    };

    Node& at(VarId id) {
        if (id < 0 || id >= static_cast<VarId>(nodes_.size())) {
            throw StateError("tape node id " + std::to_string(id) + " out of range");
        }
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& at(VarId id) const { return const_cast<Tape*>(this)->at(id); }

    static void require_2d(const Tensor<T>& t, const char* what) {
        if (t.shape.size() != 2) {
            throw ShapeError(std::string(what) + " must be 2-d, got " + t.shape_str());
        }
    }

    static void axpy(const std::vector<T>& src, std::vector<T>& dst) {
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i] += src[i];
        }
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

/// One Adam update, in place. `t` is the 1-based step count used for bias
/// correction.
template <typename T>
void adam_step(std::span<T> param, std::span<T> m, std::span<T> v, std::span<const T> grad,
               T lr, std::int64_t t, T beta1 = static_cast<T>(0.9),
               T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8)) {
    if (param.size() != grad.size() || m.size() != grad.size() || v.size() != grad.size()) {
        throw ShapeError("adam_step buffer sizes disagree");
    }
    if (t < 1) {
        throw StateError("adam_step requires step >= 1");
    }
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1), static_cast<double>(t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2), static_cast<double>(t)));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = beta1 * m[i] + (T(1) - beta1) * grad[i];
        v[i] = beta2 * v[i] + (T(1) - beta2) * grad[i] * grad[i];
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace spattn
