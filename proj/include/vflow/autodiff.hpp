#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vflow/tensor.hpp"

namespace vflow {

// Handle to a value recorded on a tape.
using Var = int;

// Reverse-mode gradient tape. Every primitive appends one node; backward()
// replays the nodes once, in reverse, accumulating gradients into per-value
// buffers. Values are immutable once recorded. Constants (targets, masks,
// noise) skip recording entirely, so backward touches only the subgraph
// that reaches a differentiable leaf.
template <typename S>
class TapeT {
  public:
    // Differentiable leaf (parameters, inputs under test).
    Var leaf(TensorT<S> v) { return push(std::move(v), true); }

    // Non-differentiable input; no gradient is ever produced for it.
    Var constant(TensorT<S> v) { return push(std::move(v), false); }

    const TensorT<S>& value(Var id) const { return values_[static_cast<size_t>(id)]; }

    // Gradient accumulated by the last backward(); zeros if untouched.
    const TensorT<S>& grad(Var id) const {
        ensure_grad(id);
        return grads_[static_cast<size_t>(id)];
    }

    size_t num_values() const { return values_.size(); }
    size_t num_nodes() const { return nodes_.size(); }

    // d(loss)/d(every recorded value). loss must be scalar.
    void backward(Var loss) {
        const TensorT<S>& l = value(loss);
        if (l.numel() != 1) {
            throw ContractError("backward: loss must be scalar, got shape " + shape_str(l.shape()));
        }
        grads_.assign(values_.size(), TensorT<S>());
        ensure_grad(loss);
        grads_[static_cast<size_t>(loss)][0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (has_grad(it->out)) it->back(*this);
        }
    }

    // ---- primitives ----

    Var matmul(Var a, Var b) {
        const TensorT<S>& A = value(a);
        const TensorT<S>& B = value(b);
        if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
            throw ShapeError("matmul: incompatible shapes " + shape_str(A.shape()) + " x " +
                             shape_str(B.shape()));
        }
        const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
        TensorT<S> C({m, n});
        matmul_kernel(A.ptr(), B.ptr(), C.ptr(), m, k, n);
        Var c = push(std::move(C), needs_grad(a) || needs_grad(b));
        record(c, "matmul", [a, b, c, m, k, n](TapeT& t) {
            const TensorT<S>& dC = t.grads_at(c);
            if (t.needs_grad(a)) {
                // dA += dC * B^T
                TensorT<S>& dA = t.grad_buf(a);
                const S* g = dC.ptr();
                const S* Bp = t.value(b).ptr();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const S gij = g[i * n + j];
                        S* da = dA.ptr() + i * k;
                        const S* brow = Bp + j;
                        for (int p = 0; p < k; ++p) da[p] += gij * brow[p * n];
                    }
            }
            if (t.needs_grad(b)) {
                // dB += A^T * dC
                TensorT<S>& dB = t.grad_buf(b);
                const S* g = dC.ptr();
                const S* Ap = t.value(a).ptr();
                for (int i = 0; i < m; ++i) {
                    const S* arow = Ap + i * k;
                    const S* grow = g + i * n;
                    for (int p = 0; p < k; ++p) {
                        const S aip = arow[p];
                        S* db = dB.ptr() + p * n;
                        for (int j = 0; j < n; ++j) db[j] += aip * grow[j];
                    }
                }
            }
        });
        return c;
    }

    Var transpose(Var a) {
        const TensorT<S>& A = value(a);
        if (A.rank() != 2) throw ShapeError("transpose: rank-2 required, got " + shape_str(A.shape()));
        const int m = A.dim(0), n = A.dim(1);
        TensorT<S> C({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) C[j * m + i] = A[i * n + j];
        Var c = push(std::move(C), needs_grad(a));
        record(c, "transpose", [a, c, m, n](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(c);
            TensorT<S>& da = t.grad_buf(a);
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i) da[i * n + j] += g[j * m + i];
        });
        return c;
    }

    Var add(Var a, Var b) { return binary_pointwise(a, b, "add", PointwiseKind::Add); }
    Var sub(Var a, Var b) { return binary_pointwise(a, b, "sub", PointwiseKind::Sub); }
    Var mul(Var a, Var b) { return binary_pointwise(a, b, "mul", PointwiseKind::Mul); }

    Var scalar_mul(Var a, S c) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) C[i] = A[i] * c;
        Var out = push(std::move(C), needs_grad(a));
        record(out, "scalar_mul", [a, out, c](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * c;
        });
        return out;
    }

    Var scalar_add(Var a, S c) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) C[i] = A[i] + c;
        Var out = push(std::move(C), needs_grad(a));
        record(out, "scalar_add", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
        });
        return out;
    }

    Var exp(Var a) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) C[i] = std::exp(A[i]);
        Var out = push(std::move(C), needs_grad(a));
        record(out, "exp", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            const TensorT<S>& y = t.value(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * y[i];
        });
        return out;
    }

    Var log(Var a) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) {
            if (!(A[i] > S(0))) {
                throw DomainError("log of non-positive value " + std::to_string(static_cast<double>(A[i])));
            }
            C[i] = std::log(A[i]);
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "log", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            const TensorT<S>& x = t.value(a);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] / x[i];
        });
        return out;
    }

    Var sqrt(Var a) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) {
            if (!(A[i] > S(0))) {
                throw DomainError("sqrt of non-positive value " + std::to_string(static_cast<double>(A[i])));
            }
            C[i] = std::sqrt(A[i]);
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "sqrt", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            const TensorT<S>& y = t.value(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * S(0.5) / y[i];
        });
        return out;
    }

    // tanh-approximation GELU, the GPT-2 block convention.
    Var gelu(Var a) {
        const TensorT<S>& A = value(a);
        TensorT<S> C(A.shape());
        for (int64_t i = 0; i < A.numel(); ++i) C[i] = gelu_fwd(A[i]);
        Var out = push(std::move(C), needs_grad(a));
        record(out, "gelu", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            const TensorT<S>& x = t.value(a);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * gelu_bwd(x[i]);
        });
        return out;
    }

    // Softmax over the last axis, with max subtraction. Masked scores near
    // -1e9 underflow to exactly zero weight.
    Var softmax_last(Var a) {
        const TensorT<S>& A = value(a);
        if (A.rank() < 1) throw ShapeError("softmax_last: rank >= 1 required");
        const int n = A.dim(A.rank() - 1);
        const int64_t rows = A.numel() / n;
        TensorT<S> C(A.shape());
        for (int64_t r = 0; r < rows; ++r) {
            const S* x = A.ptr() + r * n;
            S* y = C.ptr() + r * n;
            S mx = x[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            S sum = S(0);
            for (int j = 0; j < n; ++j) {
                y[j] = std::exp(x[j] - mx);
                sum += y[j];
            }
            const S inv = S(1) / sum;
            for (int j = 0; j < n; ++j) y[j] *= inv;
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "softmax", [a, out, n, rows](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            const TensorT<S>& y = t.value(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                const S* yr = y.ptr() + r * n;
                const S* gr = g.ptr() + r * n;
                S dot = S(0);
                for (int j = 0; j < n; ++j) dot += gr[j] * yr[j];
                S* dr = da.ptr() + r * n;
                for (int j = 0; j < n; ++j) dr[j] += yr[j] * (gr[j] - dot);
            }
        });
        return out;
    }

    // (x - mean) / sqrt(var + eps) over the last axis; affine gain/bias are
    // applied by the caller with mul/add so this stays a single rule.
    Var layernorm_last(Var a, S eps) {
        const TensorT<S>& A = value(a);
        if (A.rank() < 1) throw ShapeError("layernorm_last: rank >= 1 required");
        const int n = A.dim(A.rank() - 1);
        const int64_t rows = A.numel() / n;
        TensorT<S> C(A.shape());
        TensorT<S> inv_std({static_cast<int>(rows)});
        for (int64_t r = 0; r < rows; ++r) {
            const S* x = A.ptr() + r * n;
            S* y = C.ptr() + r * n;
            S mean = S(0);
            for (int j = 0; j < n; ++j) mean += x[j];
            mean /= S(n);
            S var = S(0);
            for (int j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
            var /= S(n);
            const S istd = S(1) / std::sqrt(var + eps);
            inv_std[r] = istd;
            for (int j = 0; j < n; ++j) y[j] = (x[j] - mean) * istd;
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "layernorm",
               [a, out, n, rows, istd_t = std::move(inv_std)](TapeT& t) {
                   if (!t.needs_grad(a)) return;
                   const TensorT<S>& g = t.grads_at(out);
                   const TensorT<S>& y = t.value(out);
                   TensorT<S>& da = t.grad_buf(a);
                   for (int64_t r = 0; r < rows; ++r) {
                       const S* yr = y.ptr() + r * n;
                       const S* gr = g.ptr() + r * n;
                       S gmean = S(0), gymean = S(0);
                       for (int j = 0; j < n; ++j) {
                           gmean += gr[j];
                           gymean += gr[j] * yr[j];
                       }
                       gmean /= S(n);
                       gymean /= S(n);
                       const S istd = istd_t[r];
                       S* dr = da.ptr() + r * n;
                       for (int j = 0; j < n; ++j) dr[j] += istd * (gr[j] - gmean - yr[j] * gymean);
                   }
               });
        return out;
    }

    Var sum_all(Var a) {
        const TensorT<S>& A = value(a);
        S s = S(0);
        for (int64_t i = 0; i < A.numel(); ++i) s += A[i];
        Var out = push(TensorT<S>::scalar(s), needs_grad(a));
        record(out, "sum_all", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const S g = t.grads_at(out)[0];
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < da.numel(); ++i) da[i] += g;
        });
        return out;
    }

    Var mean_all(Var a) {
        const TensorT<S>& A = value(a);
        const S inv = S(1) / S(A.numel());
        S s = S(0);
        for (int64_t i = 0; i < A.numel(); ++i) s += A[i];
        Var out = push(TensorT<S>::scalar(s * inv), needs_grad(a));
        record(out, "mean_all", [a, out, inv](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const S g = t.grads_at(out)[0] * inv;
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < da.numel(); ++i) da[i] += g;
        });
        return out;
    }

    // Sum over the last axis, dropping it ([..., n] -> [...]).
    Var sum_last(Var a) {
        const TensorT<S>& A = value(a);
        if (A.rank() < 1) throw ShapeError("sum_last: rank >= 1 required");
        const int n = A.dim(A.rank() - 1);
        const int64_t rows = A.numel() / n;
        std::vector<int> out_shape(A.shape().begin(), A.shape().end() - 1);
        if (out_shape.empty()) out_shape = {1};
        TensorT<S> C(out_shape);
        for (int64_t r = 0; r < rows; ++r) {
            S s = S(0);
            const S* x = A.ptr() + r * n;
            for (int j = 0; j < n; ++j) s += x[j];
            C[r] = s;
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "sum_last", [a, out, n, rows](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t r = 0; r < rows; ++r) {
                const S gr = g[r];
                S* dr = da.ptr() + r * n;
                for (int j = 0; j < n; ++j) dr[j] += gr;
            }
        });
        return out;
    }

    Var concat(const std::vector<Var>& parts, int axis) {
        if (parts.empty()) throw ContractError("concat: no inputs");
        const TensorT<S>& first = value(parts[0]);
        const int rank = first.rank();
        if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
        std::vector<int> out_shape = first.shape();
        int total = 0;
        bool req = false;
        for (Var p : parts) {
            const TensorT<S>& t = value(p);
            if (t.rank() != rank) throw ShapeError("concat: rank mismatch");
            for (int i = 0; i < rank; ++i) {
                if (i != axis && t.dim(i) != first.dim(i)) {
                    throw ShapeError("concat: shapes " + shape_str(first.shape()) + " vs " +
                                     shape_str(t.shape()) + " differ off axis " + std::to_string(axis));
                }
            }
            total += t.dim(axis);
            req = req || needs_grad(p);
        }
        out_shape[static_cast<size_t>(axis)] = total;

        // row-major: copy per (outer, part, inner-block)
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= first.dim(i);
        for (int i = axis + 1; i < rank; ++i) inner *= first.dim(i);
        TensorT<S> C(out_shape);
        const int64_t out_stride = static_cast<int64_t>(total) * inner;
        int64_t off = 0;
        for (Var p : parts) {
            const TensorT<S>& t = value(p);
            const int64_t block = static_cast<int64_t>(t.dim(axis)) * inner;
            for (int64_t o = 0; o < outer; ++o) {
                const S* src = t.ptr() + o * block;
                S* dst = C.ptr() + o * out_stride + off;
                for (int64_t i = 0; i < block; ++i) dst[i] = src[i];
            }
            off += block;
        }
        Var out = push(std::move(C), req);
        record(out, "concat", [parts, out, outer, inner, out_stride](TapeT& t) {
            const TensorT<S>& g = t.grads_at(out);
            int64_t off2 = 0;
            for (Var p : parts) {
                const int axis_len = t.value(p).numel() / std::max<int64_t>(1, outer * inner);
                const int64_t block = static_cast<int64_t>(axis_len) * inner;
                if (t.needs_grad(p)) {
                    TensorT<S>& dp = t.grad_buf(p);
                    for (int64_t o = 0; o < outer; ++o) {
                        const S* src = g.ptr() + o * out_stride + off2;
                        S* dst = dp.ptr() + o * block;
                        for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
                    }
                }
                off2 += block;
            }
        });
        return out;
    }

    Var slice(Var a, int axis, int start, int len) {
        const TensorT<S>& A = value(a);
        const int rank = A.rank();
        if (axis < 0 || axis >= rank) throw ShapeError("slice: axis out of range");
        if (start < 0 || len <= 0 || start + len > A.dim(axis)) {
            throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + len) + ") out of bounds for axis " +
                             std::to_string(axis) + " of " + shape_str(A.shape()));
        }
        std::vector<int> out_shape = A.shape();
        out_shape[static_cast<size_t>(axis)] = len;
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < axis; ++i) outer *= A.dim(i);
        for (int i = axis + 1; i < rank; ++i) inner *= A.dim(i);
        const int64_t in_stride = static_cast<int64_t>(A.dim(axis)) * inner;
        const int64_t out_block = static_cast<int64_t>(len) * inner;
        TensorT<S> C(out_shape);
        for (int64_t o = 0; o < outer; ++o) {
            const S* src = A.ptr() + o * in_stride + static_cast<int64_t>(start) * inner;
            S* dst = C.ptr() + o * out_block;
            for (int64_t i = 0; i < out_block; ++i) dst[i] = src[i];
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "slice", [a, out, outer, inner, in_stride, out_block, start](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t o = 0; o < outer; ++o) {
                const S* src = g.ptr() + o * out_block;
                S* dst = da.ptr() + o * in_stride + static_cast<int64_t>(start) * inner;
                for (int64_t i = 0; i < out_block; ++i) dst[i] += src[i];
            }
        });
        return out;
    }

    Var reshape(Var a, std::vector<int> new_shape) {
        const TensorT<S>& A = value(a);
        if (shape_numel(new_shape) != A.numel()) {
            throw ShapeError("reshape: " + shape_str(A.shape()) + " to " + shape_str(new_shape) +
                             " changes element count");
        }
        TensorT<S> C(std::move(new_shape), A.data());
        Var out = push(std::move(C), needs_grad(a));
        record(out, "reshape", [a, out](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
        });
        return out;
    }

    // Gather rows along axis 0. With a parameter table as input this is the
    // embedding lookup; backward scatter-adds into the table.
    Var take_rows(Var a, std::vector<int> idx) {
        const TensorT<S>& A = value(a);
        if (A.rank() < 1) throw ShapeError("take_rows: rank >= 1 required");
        const int rows = A.dim(0);
        for (int i : idx) {
            if (i < 0 || i >= rows) {
                throw ShapeError("take_rows: index " + std::to_string(i) + " out of range [0, " +
                                 std::to_string(rows) + ")");
            }
        }
        const int64_t rowlen = A.numel() / rows;
        std::vector<int> out_shape = A.shape();
        out_shape[0] = static_cast<int>(idx.size());
        TensorT<S> C(out_shape);
        for (size_t r = 0; r < idx.size(); ++r) {
            const S* src = A.ptr() + static_cast<int64_t>(idx[r]) * rowlen;
            S* dst = C.ptr() + static_cast<int64_t>(r) * rowlen;
            for (int64_t i = 0; i < rowlen; ++i) dst[i] = src[i];
        }
        Var out = push(std::move(C), needs_grad(a));
        record(out, "take_rows", [a, out, rowlen, idx = std::move(idx)](TapeT& t) {
            if (!t.needs_grad(a)) return;
            const TensorT<S>& g = t.grads_at(out);
            TensorT<S>& da = t.grad_buf(a);
            for (size_t r = 0; r < idx.size(); ++r) {
                const S* src = g.ptr() + static_cast<int64_t>(r) * rowlen;
                S* dst = da.ptr() + static_cast<int64_t>(idx[r]) * rowlen;
                for (int64_t i = 0; i < rowlen; ++i) dst[i] += src[i];
            }
        });
        return out;
    }

    // Value copy with no gradient path back to its producer.
    Var detach(Var a) { return constant(value(a)); }

    // ---- composites used everywhere ----

    // x [n, d_in] * w [d_in, d_out] + b [d_out]
    Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

    bool needs_grad(Var id) const { return requires_[static_cast<size_t>(id)]; }

  private:
    enum class PointwiseKind { Add, Sub, Mul };

    struct Node {
        Var out;
        const char* name;
        std::function<void(TapeT&)> back;
    };

    Var push(TensorT<S> v, bool req) {
        values_.push_back(std::move(v));
        requires_.push_back(req);
        return static_cast<Var>(values_.size() - 1);
    }

    void record(Var out, const char* name, std::function<void(TapeT&)> back) {
        if (needs_grad(out)) nodes_.push_back({out, name, std::move(back)});
    }

    bool has_grad(Var id) const {
        return !grads_[static_cast<size_t>(id)].shape().empty();
    }

    void ensure_grad(Var id) const {
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.shape().empty()) g = TensorT<S>(values_[static_cast<size_t>(id)].shape());
    }

    TensorT<S>& grad_buf(Var id) {
        ensure_grad(id);
        return grads_[static_cast<size_t>(id)];
    }

    const TensorT<S>& grads_at(Var id) {
        ensure_grad(id);
        return grads_[static_cast<size_t>(id)];
    }

    // Pointwise binary op. Shapes must match exactly, or the second operand's
    // shape must be a trailing suffix of the first (broadcast over the
    // leading batch axes, e.g. [T,d] op [d]).
    Var binary_pointwise(Var a, Var b, const char* name, PointwiseKind kind) {
        const TensorT<S>& A = value(a);
        const TensorT<S>& B = value(b);
        const bool same = A.shape() == B.shape();
        bool suffix = false;
        if (!same && B.rank() < A.rank()) {
            suffix = true;
            for (int i = 0; i < B.rank(); ++i) {
                if (B.dim(i) != A.dim(A.rank() - B.rank() + i)) suffix = false;
            }
        }
        if (!same && !suffix) {
            throw ShapeError(std::string(name) + ": shapes " + shape_str(A.shape()) + " and " +
                             shape_str(B.shape()) + " are not conformable");
        }
        const int64_t bn = B.numel();
        TensorT<S> C(A.shape());
        const S* pa = A.ptr();
        const S* pb = B.ptr();
        S* pc = C.ptr();
        switch (kind) {
            case PointwiseKind::Add:
                for (int64_t i = 0; i < A.numel(); ++i) pc[i] = pa[i] + pb[i % bn];
                break;
            case PointwiseKind::Sub:
                for (int64_t i = 0; i < A.numel(); ++i) pc[i] = pa[i] - pb[i % bn];
                break;
            case PointwiseKind::Mul:
                for (int64_t i = 0; i < A.numel(); ++i) pc[i] = pa[i] * pb[i % bn];
                break;
        }
        Var out = push(std::move(C), needs_grad(a) || needs_grad(b));
        record(out, name, [a, b, out, kind, bn](TapeT& t) {
            const TensorT<S>& g = t.grads_at(out);
            if (t.needs_grad(a)) {
                TensorT<S>& da = t.grad_buf(a);
                const S* pb2 = t.value(b).ptr();
                switch (kind) {
                    case PointwiseKind::Add:
                    case PointwiseKind::Sub:
                        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
                        break;
                    case PointwiseKind::Mul:
                        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * pb2[i % bn];
                        break;
                }
            }
            if (t.needs_grad(b)) {
                TensorT<S>& db = t.grad_buf(b);
                const S* pa2 = t.value(a).ptr();
                switch (kind) {
                    case PointwiseKind::Add:
                        for (int64_t i = 0; i < g.numel(); ++i) db[i % bn] += g[i];
                        break;
                    case PointwiseKind::Sub:
                        for (int64_t i = 0; i < g.numel(); ++i) db[i % bn] -= g[i];
                        break;
                    case PointwiseKind::Mul:
                        for (int64_t i = 0; i < g.numel(); ++i) db[i % bn] += g[i] * pa2[i];
                        break;
                }
            }
        });
        return out;
    }

    static void matmul_kernel(const S* a, const S* b, S* c, int m, int k, int n) {
        for (int i = 0; i < m; ++i) {
            S* crow = c + static_cast<int64_t>(i) * n;
            const S* arow = a + static_cast<int64_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const S aip = arow[p];
                const S* brow = b + static_cast<int64_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
            }
        }
    }

    static S gelu_fwd(S x) {
        const S c = S(0.7978845608028654);  // sqrt(2/pi)
        const S u = c * (x + S(0.044715) * x * x * x);
        return S(0.5) * x * (S(1) + std::tanh(u));
    }

    static S gelu_bwd(S x) {
        const S c = S(0.7978845608028654);
        const S u = c * (x + S(0.044715) * x * x * x);
        const S th = std::tanh(u);
        const S sech2 = S(1) - th * th;
        return S(0.5) * (S(1) + th) + S(0.5) * x * sech2 * c * (S(1) + S(3) * S(0.044715) * x * x);
    }

    std::vector<TensorT<S>> values_;
    std::vector<char> requires_;
    mutable std::vector<TensorT<S>> grads_;
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using TapeF64 = TapeT<double>;

}  // namespace vflow
