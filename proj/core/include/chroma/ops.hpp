#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "chroma/tape.hpp"
#include "chroma/tensor.hpp"

// Differentiable primitives. Every operation validates its shape contract,
// computes the forward value, rejects non-finite results immediately, and —
// when a tape is active and an input is tracked — records a pullback.
//
// Shape contracts (row-major throughout):
//   add(a, b)                  same shape
//   sub(a, b)                  same shape
//   mul(a, b)                  elementwise, same shape
//   scale(x, c)                c is a compile-time constant w.r.t. the tape
//   add_row_broadcast(x, v)    x: [N x D], v: [D]; v added to every row
//   sum_all(x)                 any shape -> scalar [1]
//   matmul(a, b)               a: [m x k], b: [k x n] -> [m x n]
//   transpose(x)               x: [r x c] -> [c x r]
//   reshape(x, shape)          same element count, row-major order kept
//   gather(x, idx, shape)      out.flat[i] = x.flat[idx[i]]; duplicates allowed
//   concat_cols(xs)            all [N x D_i] -> [N x sum(D_i)]
//   concat_axis0(a, b)         trailing extents equal -> stacked along axis 0
//   softmax_rows(x)            x: [r x c], row-wise, max-subtracted
//   masked_softmax_rows(x, m)  softmax over allowed entries; masked outputs 0
//   mean_over_axis(x, axis)    drops the named axis
//   layer_norm(x, gain, bias)  normalizes the last axis, eps = 1e-5
//   gelu(x), relu(x)           elementwise
//   linear(x, w, b)            x: [N x in], w: [in x out], b: [out]
//   conv2d(x, w, b, s, p)      x: [Cin x H x W], w: [Cout x Cin x kh x kw]
//   upsample_nearest(x, f)     x: [C x H x W] -> [C x fH x fW]
//   cross_entropy_logits(...)  logits: [n x K], int labels, ignore marker

namespace chroma::ops {

using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

// Attention mask: 1 = query row i may attend key column j.
struct AttnMask {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<std::uint8_t> allowed;

    bool at(std::int64_t i, std::int64_t j) const {
        return allowed[static_cast<std::size_t>(i * cols + j)] != 0;
    }
};

namespace detail {

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

template <typename T>
Tape<T>* tracking_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = Tape<T>::active();
    if (!tape) return nullptr;
    for (const Tensor<T>* t : inputs) {
        if (tape->tracks(*t)) return tape;
    }
    return nullptr;
}

template <typename T>
void axpy(std::span<T> out, T a, std::span<const T> x) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += a * x[i];
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    Tensor<T> result(a.shape(), std::move(out));
    detail::check_finite(result, "add");
    if (Tape<T>* tape = detail::tracking_tape<T>({&a, &b})) {
        auto pb = [](std::span<const T> g, std::span<std::span<T>> gin) {
            for (auto& dst : gin) {
                if (!dst.empty()) detail::axpy(dst, T(1), g);
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(a), tape->node_of(b)}, pb, "add"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    std::vector<T> out(x.data().begin(), x.data().end());
    for (auto& v : out) v *= c;
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "scale");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [c](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) detail::axpy(gin[0], c, g);
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "scale"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    std::vector<T> out(static_cast<std::size_t>(a.numel()));
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
    Tensor<T> result(a.shape(), std::move(out));
    detail::check_finite(result, "mul");
    if (Tape<T>* tape = detail::tracking_tape<T>({&a, &b})) {
        auto pb = [a, b](std::span<const T> g, std::span<std::span<T>> gin) {
            auto ad = a.data();
            auto bd = b.data();
            if (!gin[0].empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * bd[i];
            }
            if (!gin[1].empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gin[1][i] += g[i] * ad[i];
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(a), tape->node_of(b)}, pb, "mul"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> add_row_broadcast(const Tensor<T>& x, const Tensor<T>& v) {
    if (x.rank() != 2 || v.rank() != 1 || x.extent(1) != v.extent(0)) {
        throw ShapeError("add_row_broadcast: need [N x D] and [D], got " + shape_str(x.shape()) + " and " +
                         shape_str(v.shape()));
    }
    const std::int64_t n = x.extent(0), d = x.extent(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    auto vd = v.data();
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(i * d + j)] += vd[static_cast<std::size_t>(j)];
    }
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "add_row_broadcast");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x, &v})) {
        auto pb = [n, d](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) detail::axpy(gin[0], T(1), g);
            if (!gin[1].empty()) {
                for (std::int64_t i = 0; i < n; ++i) {
                    for (std::int64_t j = 0; j < d; ++j) gin[1][static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i * d + j)];
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x), tape->node_of(v)}, pb, "add_row_broadcast"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
    T total = T(0);
    for (T v : x.data()) total += v;
    Tensor<T> result({1}, {total});
    detail::check_finite(result, "sum_all");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) {
                for (auto& v : gin[0]) v += g[0];
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "sum_all"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return scale(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul: operands must be rank 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    if (a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
    std::vector<T> out(static_cast<std::size_t>(m * n), T(0));
    const T* ad = a.raw();
    const T* bd = b.raw();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const T av = ad[i * k + kk];
            if (av == T(0)) continue;
            const T* brow = bd + kk * n;
            T* orow = out.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    Tensor<T> result({m, n}, std::move(out));
    detail::check_finite(result, "matmul");
    if (Tape<T>* tape = detail::tracking_tape<T>({&a, &b})) {
        auto pb = [a, b, m, k, n](std::span<const T> g, std::span<std::span<T>> gin) {
            const T* ad = a.raw();
            const T* bd = b.raw();
            if (!gin[0].empty()) {
                // dA = g . B^T
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        T acc = T(0);
                        const T* grow = g.data() + i * n;
                        const T* brow = bd + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        gin[0][static_cast<std::size_t>(i * k + kk)] += acc;
                    }
                }
            }
            if (!gin[1].empty()) {
                // dB = A^T . g
                for (std::int64_t i = 0; i < m; ++i) {
                    const T* grow = g.data() + i * n;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const T av = ad[i * k + kk];
                        if (av == T(0)) continue;
                        T* brow = gin[1].data() + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(a), tape->node_of(b)}, pb, "matmul"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: rank-2 tensor required, got " + shape_str(x.shape()));
    const std::int64_t r = x.extent(0), c = x.extent(1);
    std::vector<T> out(static_cast<std::size_t>(r * c));
    const T* xd = x.raw();
    for (std::int64_t i = 0; i < r; ++i) {
        for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(j * r + i)] = xd[i * c + j];
    }
    Tensor<T> result({c, r}, std::move(out));
    detail::check_finite(result, "transpose");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [r, c](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) {
                for (std::int64_t i = 0; i < c; ++i) {
                    for (std::int64_t j = 0; j < r; ++j) gin[0][static_cast<std::size_t>(j * c + i)] += g[static_cast<std::size_t>(i * r + j)];
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "transpose"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " + shape_str(shape));
    }
    Tensor<T> result(shape, std::vector<T>(x.data().begin(), x.data().end()));
    detail::check_finite(result, "reshape");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) detail::axpy(gin[0], T(1), g);
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "reshape"), tape->epoch());
    }
    return result;
}

// out.flat[i] = x.flat[idx[i]]. The pullback scatter-adds in ascending output
// order, which keeps gradient accumulation deterministic when indices repeat.
template <typename T>
Tensor<T> gather(const Tensor<T>& x, const IndexMap& idx, Shape out_shape) {
    const std::int64_t n_out = numel_of(out_shape);
    if (static_cast<std::int64_t>(idx->size()) != n_out) {
        throw ShapeError("gather: index count does not match output shape");
    }
    std::vector<T> out(static_cast<std::size_t>(n_out));
    const T* xd = x.raw();
    const std::int64_t n_in = x.numel();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::int64_t src = (*idx)[i];
        if (src < 0 || src >= n_in) throw ShapeError("gather: index out of range");
        out[i] = xd[src];
    }
    Tensor<T> result(std::move(out_shape), std::move(out));
    detail::check_finite(result, "gather");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [idx](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) {
                for (std::size_t i = 0; i < g.size(); ++i) gin[0][static_cast<std::size_t>((*idx)[i])] += g[i];
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "gather"), tape->epoch());
    }
    return result;
}

// Rows [r0, r1) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t r0, std::int64_t r1) {
    if (x.rank() != 2) throw ShapeError("slice_rows: rank-2 tensor required");
    if (r0 < 0 || r1 > x.extent(0) || r0 >= r1) throw ShapeError("slice_rows: bad row range");
    const std::int64_t d = x.extent(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>((r1 - r0) * d));
    for (std::int64_t i = r0 * d; i < r1 * d; ++i) idx->push_back(i);
    return gather(x, idx, {r1 - r0, d});
}

// Columns [c0, c0 + len) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t len) {
    if (x.rank() != 2) throw ShapeError("slice_cols: rank-2 tensor required");
    if (c0 < 0 || len < 1 || c0 + len > x.extent(1)) throw ShapeError("slice_cols: bad column range");
    const std::int64_t n = x.extent(0), d = x.extent(1);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(n * len));
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t k = 0; k < len; ++k) idx->push_back(i * d + c0 + k);
    }
    return gather(x, idx, {n, len});
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: no inputs");
    const std::int64_t n = xs[0].extent(0);
    std::int64_t total = 0;
    for (const auto& x : xs) {
        if (x.rank() != 2 || x.extent(0) != n) throw ShapeError("concat_cols: inputs must be [N x D_i] with equal N");
        total += x.extent(1);
    }
    std::vector<T> out(static_cast<std::size_t>(n * total));
    std::int64_t col = 0;
    for (const auto& x : xs) {
        const std::int64_t d = x.extent(1);
        const T* xd = x.raw();
        for (std::int64_t i = 0; i < n; ++i) {
            std::copy(xd + i * d, xd + (i + 1) * d, out.data() + i * total + col);
        }
        col += d;
    }
    Tensor<T> result({n, total}, std::move(out));
    detail::check_finite(result, "concat_cols");
    Tape<T>* tape = Tape<T>::active();
    bool track = false;
    if (tape) {
        for (const auto& x : xs) track = track || tape->tracks(x);
    }
    if (track) {
        std::vector<int> nodes;
        std::vector<std::int64_t> widths;
        for (const auto& x : xs) {
            nodes.push_back(tape->node_of(x));
            widths.push_back(x.extent(1));
        }
        auto pb = [n, total, widths](std::span<const T> g, std::span<std::span<T>> gin) {
            std::int64_t col = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                const std::int64_t d = widths[k];
                if (!gin[k].empty()) {
                    for (std::int64_t i = 0; i < n; ++i) {
                        for (std::int64_t j = 0; j < d; ++j) gin[k][static_cast<std::size_t>(i * d + j)] += g[static_cast<std::size_t>(i * total + col + j)];
                    }
                }
                col += d;
            }
        };
        result.set_node(tape->add_node(result.shape(), std::move(nodes), pb, "concat_cols"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> concat_axis0(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != b.rank() || a.rank() < 1) throw ShapeError("concat_axis0: rank mismatch");
    for (std::size_t i = 1; i < a.shape().size(); ++i) {
        if (a.shape()[i] != b.shape()[i]) throw ShapeError("concat_axis0: trailing extents differ");
    }
    Shape out_shape = a.shape();
    out_shape[0] += b.shape()[0];
    std::vector<T> out;
    out.reserve(static_cast<std::size_t>(a.numel() + b.numel()));
    out.insert(out.end(), a.data().begin(), a.data().end());
    out.insert(out.end(), b.data().begin(), b.data().end());
    Tensor<T> result(std::move(out_shape), std::move(out));
    detail::check_finite(result, "concat_axis0");
    if (Tape<T>* tape = detail::tracking_tape<T>({&a, &b})) {
        const std::size_t na = static_cast<std::size_t>(a.numel());
        auto pb = [na](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) {
                for (std::size_t i = 0; i < na; ++i) gin[0][i] += g[i];
            }
            if (!gin[1].empty()) {
                for (std::size_t i = na; i < g.size(); ++i) gin[1][i - na] += g[i];
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(a), tape->node_of(b)}, pb, "concat_axis0"),
                        tape->epoch());
    }
    return result;
}

namespace detail {

// Shared forward for the (masked) row softmax; mask == nullptr means dense.
template <typename T>
std::vector<T> softmax_forward(const Tensor<T>& x, const AttnMask* mask, const char* op) {
    if (x.rank() != 2) throw ShapeError(std::string(op) + ": rank-2 tensor required");
    const std::int64_t r = x.extent(0), c = x.extent(1);
    if (c < 1) throw ShapeError(std::string(op) + ": empty row dimension");
    if (mask && (mask->rows != r || mask->cols != c)) throw ShapeError(std::string(op) + ": mask shape mismatch");
    std::vector<T> out(static_cast<std::size_t>(r * c), T(0));
    const T* xd = x.raw();
    for (std::int64_t i = 0; i < r; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < c; ++j) {
            if (!mask || mask->at(i, j)) mx = std::max(mx, xd[i * c + j]);
        }
        if (!std::isfinite(static_cast<double>(mx))) {
            throw ValueError(std::string(op) + ": row " + std::to_string(i) + " has no attendable entry");
        }
        T denom = T(0);
        for (std::int64_t j = 0; j < c; ++j) {
            if (!mask || mask->at(i, j)) {
                const T e = std::exp(xd[i * c + j] - mx);
                out[static_cast<std::size_t>(i * c + j)] = e;
                denom += e;
            }
        }
        for (std::int64_t j = 0; j < c; ++j) out[static_cast<std::size_t>(i * c + j)] /= denom;
    }
    return out;
}

// dL/dx_j = y_j * (g_j - sum_k g_k y_k), rows independent. Masked entries
// have y = 0, so the same formula covers both variants.
template <typename T>
void softmax_pullback(std::span<const T> g, std::span<T> gx, const std::vector<T>& y, std::int64_t r, std::int64_t c) {
    for (std::int64_t i = 0; i < r; ++i) {
        T dot = T(0);
        for (std::int64_t j = 0; j < c; ++j) dot += g[static_cast<std::size_t>(i * c + j)] * y[static_cast<std::size_t>(i * c + j)];
        for (std::int64_t j = 0; j < c; ++j) {
            const std::size_t ij = static_cast<std::size_t>(i * c + j);
            gx[ij] += y[ij] * (g[ij] - dot);
        }
    }
}

}  // namespace detail

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
    std::vector<T> out = detail::softmax_forward(x, nullptr, "softmax_rows");
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "softmax_rows");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        const std::int64_t r = x.extent(0), c = x.extent(1);
        std::vector<T> y(result.data().begin(), result.data().end());
        auto pb = [y = std::move(y), r, c](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) detail::softmax_pullback(g, gin[0], y, r, c);
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, std::move(pb), "softmax_rows"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> masked_softmax_rows(const Tensor<T>& x, const AttnMask& mask) {
    std::vector<T> out = detail::softmax_forward(x, &mask, "masked_softmax_rows");
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "masked_softmax_rows");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        const std::int64_t r = x.extent(0), c = x.extent(1);
        std::vector<T> y(result.data().begin(), result.data().end());
        auto pb = [y = std::move(y), r, c](std::span<const T> g, std::span<std::span<T>> gin) {
            if (!gin[0].empty()) detail::softmax_pullback(g, gin[0], y, r, c);
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, std::move(pb), "masked_softmax_rows"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> mean_over_axis(const Tensor<T>& x, std::size_t axis) {
    if (axis >= x.shape().size()) throw ShapeError("mean_over_axis: axis out of range");
    const Shape& in = x.shape();
    Shape out_shape;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (i != axis) out_shape.push_back(in[i]);
    }
    if (out_shape.empty()) out_shape.push_back(1);

    std::int64_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
    for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
    const std::int64_t reduce = in[axis];
    if (reduce < 1) throw ShapeError("mean_over_axis: empty reduction axis");

    std::vector<T> out(static_cast<std::size_t>(outer * inner), T(0));
    const T* xd = x.raw();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t k = 0; k < reduce; ++k) {
            const T* src = xd + (o * reduce + k) * inner;
            T* dst = out.data() + o * inner;
            for (std::int64_t j = 0; j < inner; ++j) dst[j] += src[j];
        }
    }
    const T inv = T(1) / static_cast<T>(reduce);
    for (auto& v : out) v *= inv;
    Tensor<T> result(std::move(out_shape), std::move(out));
    detail::check_finite(result, "mean_over_axis");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [outer, reduce, inner, inv](std::span<const T> g, std::span<std::span<T>> gin) {
            if (gin[0].empty()) return;
            for (std::int64_t o = 0; o < outer; ++o) {
                for (std::int64_t k = 0; k < reduce; ++k) {
                    T* dst = gin[0].data() + (o * reduce + k) * inner;
                    const T* src = g.data() + o * inner;
                    for (std::int64_t j = 0; j < inner; ++j) dst[j] += inv * src[j];
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "mean_over_axis"), tape->epoch());
    }
    return result;
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes the last axis; constant rows map to zero before gain/bias
// (the epsilon keeps the zero-variance case well-defined).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias) {
    if (x.rank() < 1) throw ShapeError("layer_norm: rank >= 1 required");
    const std::int64_t d = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != d || bias.extent(0) != d) {
        throw ShapeError("layer_norm: gain/bias must be [D] with D = last extent of x");
    }
    const std::int64_t rows = x.numel() / d;
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    std::vector<T> xhat(out.size());
    std::vector<T> inv_std(static_cast<std::size_t>(rows));
    const T* xd = x.raw();
    const T* gd = gain.raw();
    const T* bd = bias.raw();
    for (std::int64_t i = 0; i < rows; ++i) {
        const T* row = xd + i * d;
        T mean = T(0);
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T istd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        inv_std[static_cast<std::size_t>(i)] = istd;
        for (std::int64_t j = 0; j < d; ++j) {
            const T h = (row[j] - mean) * istd;
            xhat[static_cast<std::size_t>(i * d + j)] = h;
            out[static_cast<std::size_t>(i * d + j)] = h * gd[j] + bd[j];
        }
    }
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "layer_norm");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x, &gain, &bias})) {
        auto pb = [xhat = std::move(xhat), inv_std = std::move(inv_std), gain, rows, d](
                      std::span<const T> g, std::span<std::span<T>> gin) {
            const T* gd = gain.raw();
            for (std::int64_t i = 0; i < rows; ++i) {
                const T* grow = g.data() + i * d;
                const T* hrow = xhat.data() + i * d;
                if (!gin[0].empty()) {
                    // dx = istd * (dy*gain - mean(dy*gain) - xhat * mean(dy*gain*xhat))
                    T m1 = T(0), m2 = T(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const T t = grow[j] * gd[j];
                        m1 += t;
                        m2 += t * hrow[j];
                    }
                    m1 /= static_cast<T>(d);
                    m2 /= static_cast<T>(d);
                    const T istd = inv_std[static_cast<std::size_t>(i)];
                    T* dst = gin[0].data() + i * d;
                    for (std::int64_t j = 0; j < d; ++j) {
                        dst[j] += istd * (grow[j] * gd[j] - m1 - hrow[j] * m2);
                    }
                }
                if (!gin[1].empty()) {
                    for (std::int64_t j = 0; j < d; ++j) gin[1][static_cast<std::size_t>(j)] += grow[j] * hrow[j];
                }
                if (!gin[2].empty()) {
                    for (std::int64_t j = 0; j < d; ++j) gin[2][static_cast<std::size_t>(j)] += grow[j];
                }
            }
        };
        result.set_node(tape->add_node(result.shape(),
                                       {tape->node_of(x), tape->node_of(gain), tape->node_of(bias)}, std::move(pb),
                                       "layer_norm"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = static_cast<double>(xd[i]);
        out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "gelu");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [x, inv_sqrt2](std::span<const T> g, std::span<std::span<T>> gin) {
            if (gin[0].empty()) return;
            auto xd = x.data();
            const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double v = static_cast<double>(xd[i]);
                const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                gin[0][i] += g[i] * static_cast<T>(cdf + v * pdf);
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "gelu"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    std::vector<T> out(static_cast<std::size_t>(x.numel()));
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
    Tensor<T> result(x.shape(), std::move(out));
    detail::check_finite(result, "relu");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x})) {
        auto pb = [x](std::span<const T> g, std::span<std::span<T>> gin) {
            if (gin[0].empty()) return;
            auto xd = x.data();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xd[i] > T(0)) gin[0][i] += g[i];
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x)}, pb, "relu"), tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1) throw ShapeError("linear: need [N x in], [in x out], [out]");
    if (x.extent(1) != w.extent(0) || w.extent(1) != b.extent(0)) {
        throw ShapeError("linear: shape mismatch " + shape_str(x.shape()) + " x " + shape_str(w.shape()) + " + " +
                         shape_str(b.shape()));
    }
    return add_row_broadcast(matmul(x, w), b);
}

struct Conv2dAttrs {
    std::int64_t stride = 1;
    std::int64_t pad = 0;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv2dAttrs attrs = {}) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        throw ShapeError("conv2d: need x [Cin x H x W], w [Cout x Cin x kh x kw], b [Cout]");
    }
    const std::int64_t cin = x.extent(0), h = x.extent(1), wd = x.extent(2);
    const std::int64_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    if (w.extent(1) != cin) throw ShapeError("conv2d: input channel mismatch");
    if (b.extent(0) != cout) throw ShapeError("conv2d: bias extent mismatch");
    const std::int64_t s = attrs.stride, p = attrs.pad;
    if (s < 1 || p < 0) throw ShapeError("conv2d: invalid stride/pad");
    const std::int64_t ho = (h + 2 * p - kh) / s + 1;
    const std::int64_t wo = (wd + 2 * p - kw) / s + 1;
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");

    std::vector<T> out(static_cast<std::size_t>(cout * ho * wo));
    const T* xd = x.raw();
    const T* wdt = w.raw();
    const T* bd = b.raw();
    for (std::int64_t co = 0; co < cout; ++co) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                T acc = bd[co];
                for (std::int64_t ci = 0; ci < cin; ++ci) {
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = oy * s - p + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ox * s - p + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += xd[(ci * h + iy) * wd + ix] * wdt[((co * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[static_cast<std::size_t>((co * ho + oy) * wo + ox)] = acc;
            }
        }
    }
    Tensor<T> result({cout, ho, wo}, std::move(out));
    detail::check_finite(result, "conv2d");
    if (Tape<T>* tape = detail::tracking_tape<T>({&x, &w, &b})) {
        auto pb = [x, w, cin, h, wd, cout, kh, kw, s, p, ho, wo](std::span<const T> g, std::span<std::span<T>> gin) {
            const T* xd = x.raw();
            const T* wdt = w.raw();
            for (std::int64_t co = 0; co < cout; ++co) {
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const T go = g[static_cast<std::size_t>((co * ho + oy) * wo + ox)];
                        if (!gin[2].empty()) gin[2][static_cast<std::size_t>(co)] += go;
                        if (go == T(0)) continue;
                        for (std::int64_t ci = 0; ci < cin; ++ci) {
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                const std::int64_t iy = oy * s - p + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const std::int64_t ix = ox * s - p + kx;
                                    if (ix < 0 || ix >= wd) continue;
                                    const std::size_t xoff = static_cast<std::size_t>((ci * h + iy) * wd + ix);
                                    const std::size_t woff = static_cast<std::size_t>(((co * cin + ci) * kh + ky) * kw + kx);
                                    if (!gin[0].empty()) gin[0][xoff] += go * wdt[woff];
                                    if (!gin[1].empty()) gin[1][woff] += go * xd[xoff];
                                }
                            }
                        }
                    }
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(x), tape->node_of(w), tape->node_of(b)}, pb,
                                       "conv2d"),
                        tape->epoch());
    }
    return result;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::int64_t factor) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest: need [C x H x W]");
    if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
    const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
    auto idx = std::make_shared<std::vector<std::int64_t>>();
    idx->reserve(static_cast<std::size_t>(c * h * w * factor * factor));
    for (std::int64_t ci = 0; ci < c; ++ci) {
        for (std::int64_t oy = 0; oy < h * factor; ++oy) {
            for (std::int64_t ox = 0; ox < w * factor; ++ox) {
                idx->push_back((ci * h + oy / factor) * w + ox / factor);
            }
        }
    }
    return gather(x, idx, {c, h * factor, w * factor});
}

// Negative log-softmax over rows whose label is not the ignore marker.
// With row_weight < 0 (default) the result is the mean over effective rows and
// the pullback is (softmax - one_hot) / n_effective. With row_weight >= 0 each
// effective row contributes ce * row_weight instead; a caller accumulating
// gradients over micro-batches passes the fused batch's 1/N here so the split
// and fused computations share the exact same per-row multiplier.
template <typename T>
Tensor<T> cross_entropy_logits(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                               std::int32_t ignore_label = -1, double row_weight = -1.0) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy_logits: logits must be [n x K]");
    const std::int64_t n = logits.extent(0), k = logits.extent(1);
    if (static_cast<std::int64_t>(labels.size()) != n) {
        throw ShapeError("cross_entropy_logits: label count " + std::to_string(labels.size()) +
                         " does not match row count " + std::to_string(n));
    }
    const T* ld = logits.raw();
    std::int64_t n_eff = 0;
    double total = 0.0;
    std::vector<T> probs(static_cast<std::size_t>(n * k), T(0));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t label = labels[static_cast<std::size_t>(i)];
        if (label == ignore_label) continue;
        if (label < 0 || label >= k) {
            throw ValueError("cross_entropy_logits: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(k) + ")");
        }
        const T* row = ld + i * k;
        T mx = row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (std::int64_t j = 0; j < k; ++j) {
            const T e = std::exp(row[j] - mx);
            probs[static_cast<std::size_t>(i * k + j)] = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < k; ++j) probs[static_cast<std::size_t>(i * k + j)] /= denom;
        total += -std::log(static_cast<double>(probs[static_cast<std::size_t>(i * k + label)]));
        ++n_eff;
    }
    if (n_eff == 0) throw ValueError("cross_entropy_logits: every label is the ignore marker");
    const double row_w_d = row_weight < 0.0 ? 1.0 / static_cast<double>(n_eff) : row_weight;
    const T row_w = static_cast<T>(row_w_d);
    Tensor<T> result({1}, {static_cast<T>(total * row_w_d)});
    detail::check_finite(result, "cross_entropy_logits");
    if (Tape<T>* tape = detail::tracking_tape<T>({&logits})) {
        std::vector<std::int32_t> labels_copy(labels.begin(), labels.end());
        auto pb = [probs = std::move(probs), labels = std::move(labels_copy), n, k, row_w, ignore_label](
                      std::span<const T> g, std::span<std::span<T>> gin) {
            if (gin[0].empty()) return;
            const T w = g[0] * row_w;
            for (std::int64_t i = 0; i < n; ++i) {
                const std::int32_t label = labels[static_cast<std::size_t>(i)];
                if (label == ignore_label) continue;
                for (std::int64_t j = 0; j < k; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i * k + j);
                    gin[0][ij] += w * (probs[ij] - (j == label ? T(1) : T(0)));
                }
            }
        };
        result.set_node(tape->add_node(result.shape(), {tape->node_of(logits)}, std::move(pb), "cross_entropy_logits"),
                        tape->epoch());
    }
    return result;
}

// Convenience entry point for running backward through the active tape.
template <typename T>
Gradients<T> backward(Tape<T>& tape, const Tensor<T>& loss) {
    return tape.backward(loss);
}

}  // namespace chroma::ops
