// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mammoth/errors.hpp"
#include "mammoth/rng.hpp"
#include "mammoth/tensor.hpp"

namespace mammoth {

// Dense kernels. All reductions accumulate in double regardless of T, so
// fp32 results do not depend on summation order beyond final rounding.
namespace kernel {

// C[M×R] (+)= A[M×K] · B[K×R]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t r, bool accumulate) {
    std::vector<double> acc(r);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const T* brow = b + p * r;
            for (std::size_t j = 0; j < r; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c + i * r;
        for (std::size_t j = 0; j < r; ++j) {
            crow[j] = accumulate ? static_cast<T>(crow[j] + acc[j]) : static_cast<T>(acc[j]);
        }
    }
}

// C[M×R] (+)= A[M×K] · B[R×K]ᵀ
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t r, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < r; ++j) {
            const T* brow = b + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * brow[p];
            T& out = c[i * r + j];
            out = accumulate ? static_cast<T>(out + s) : static_cast<T>(s);
        }
    }
}

// C[M×R] (+)= A[K×M]ᵀ · B[K×R]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t r, bool accumulate) {
    std::vector<double> acc(m * r, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a + p * m;
        const T* brow = b + p * r;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* accrow = acc.data() + i * r;
            for (std::size_t j = 0; j < r; ++j) accrow[j] += av * static_cast<double>(brow[j]);
        }
    }
    for (std::size_t i = 0; i < m * r; ++i) {
        c[i] = accumulate ? static_cast<T>(c[i] + acc[i]) : static_cast<T>(acc[i]);
    }
}

}  // namespace kernel

namespace detail {

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void accumulate(Node<T>& dst, std::span<const T> src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst.grad[i] += src[i];
}

// Axis decomposition: element (o, l, in) lives at (o * len + l) * inner + in.
struct AxisView {
    std::size_t outer, len, inner;
};

inline AxisView axis_view(const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    AxisView v{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    if (a.cols() != b.rows()) throw DimensionError("matmul", a.shape(), b.shape());
    const std::size_t m = a.rows(), k = a.cols(), r = b.cols();
    std::vector<T> out(m * r);
    kernel::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, r, false);
    auto res = detail::make_result<T>({m, r}, std::move(out), "matmul", {&a, &b});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, k, r](Node<T>& self) {
            Node<T>& pa = *self.parents[0];
            Node<T>& pb = *self.parents[1];
            if (pa.requires_grad) kernel::gemm_nt(self.grad.data(), pb.data.data(), pa.grad.data(), m, r, k, true);
            if (pb.requires_grad) kernel::gemm_tn(pa.data.data(), self.grad.data(), pb.grad.data(), k, m, r, true);
        };
    }
    return res;
}

/// a · bᵀ for a: M×K, b: R×K.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank2(a, "matmul_nt");
    detail::require_rank2(b, "matmul_nt");
    if (a.cols() != b.cols()) throw DimensionError("matmul_nt", a.shape(), b.shape());
    const std::size_t m = a.rows(), k = a.cols(), r = b.rows();
    std::vector<T> out(m * r);
    kernel::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, r, false);
    auto res = detail::make_result<T>({m, r}, std::move(out), "matmul_nt", {&a, &b});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, k, r](Node<T>& self) {
            Node<T>& pa = *self.parents[0];
            Node<T>& pb = *self.parents[1];
            if (pa.requires_grad) kernel::gemm_nn(self.grad.data(), pb.data.data(), pa.grad.data(), m, r, k, true);
            if (pb.requires_grad) kernel::gemm_tn(self.grad.data(), pa.data.data(), pb.grad.data(), r, m, k, true);
        };
    }
    return res;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank2(a, "transpose");
    const std::size_t m = a.rows(), n = a.cols();
    std::vector<T> out(m * n);
    const auto src = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
    auto res = detail::make_result<T>({n, m}, std::move(out), "transpose", {&a});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, n](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) p.grad[i * n + j] += self.grad[j * m + i];
        };
    }
    return res;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("add", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    auto res = detail::make_result<T>(a.shape(), std::move(out), "add", {&a, &b});
    if (res.requires_grad()) {
        res.node()->backward_fn = [](Node<T>& self) {
            for (auto& p : self.parents)
                if (p->requires_grad) detail::accumulate<T>(*p, self.grad);
        };
    }
    return res;
}

/// Adds a length-C vector to every row of an M×C matrix. The only broadcast.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
    if (row.numel() != a.cols()) throw DimensionError("add_row", a.shape(), row.shape());
    const std::size_t c = a.cols(), m = a.numel() / c;
    std::vector<T> out(a.numel());
    const auto x = a.data(), v = row.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + v[j];
    auto res = detail::make_result<T>(a.shape(), std::move(out), "add_row", {&a, &row});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, c](Node<T>& self) {
            Node<T>& pa = *self.parents[0];
            Node<T>& pv = *self.parents[1];
            if (pa.requires_grad) detail::accumulate<T>(pa, self.grad);
            if (pv.requires_grad)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) pv.grad[j] += self.grad[i * c + j];
        };
    }
    return res;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("mul", a.shape(), b.shape());
    std::vector<T> out(a.numel());
    const auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    auto res = detail::make_result<T>(a.shape(), std::move(out), "mul", {&a, &b});
    if (res.requires_grad()) {
        res.node()->backward_fn = [](Node<T>& self) {
            Node<T>& pa = *self.parents[0];
            Node<T>& pb = *self.parents[1];
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.data[i];
                if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.data[i];
            }
        };
    }
    return res;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    auto res = detail::make_result<T>(a.shape(), std::move(out), "scale", {&a});
    if (res.requires_grad()) {
        res.node()->backward_fn = [factor](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
        };
    }
    return res;
}

namespace detail {

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, std::string_view name, F f, DF df_from_xy) {
    std::vector<T> out(a.numel());
    const auto x = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
    auto res = make_result<T>(a.shape(), std::move(out), name, {&a});
    if (res.requires_grad()) {
        res.node()->backward_fn = [df_from_xy](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p.grad[i] += self.grad[i] * df_from_xy(p.data[i], self.data[i]);
        };
    }
    return res;
}

}  // namespace detail

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary(
        a, "relu", [](T x) { return x > T(0) || std::isnan(x) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail::unary(
        a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary(
        a, "sigmoid", [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Softmax along `axis`, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto v = detail::axis_view(x.shape(), axis);
    const auto in = x.data();
    std::vector<T> out(x.numel());
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t q = 0; q < v.inner; ++q) {
            const auto at = [&](std::size_t l) { return (o * v.len + l) * v.inner + q; };
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < v.len; ++l) {
                const double z = in[at(l)];
                if (std::isnan(z)) throw NumericError("softmax: NaN input");
                mx = std::max(mx, z);
            }
            double sum = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) sum += std::exp(static_cast<double>(in[at(l)]) - mx);
            for (std::size_t l = 0; l < v.len; ++l)
                out[at(l)] = static_cast<T>(std::exp(static_cast<double>(in[at(l)]) - mx) / sum);
        }
    }
    auto res = detail::make_result<T>(x.shape(), std::move(out), "softmax", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [v](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t q = 0; q < v.inner; ++q) {
                    const auto at = [&](std::size_t l) { return (o * v.len + l) * v.inner + q; };
                    double dot = 0.0;
                    for (std::size_t l = 0; l < v.len; ++l)
                        dot += static_cast<double>(self.grad[at(l)]) * self.data[at(l)];
                    for (std::size_t l = 0; l < v.len; ++l)
                        p.grad[at(l)] += static_cast<T>(self.data[at(l)] * (self.grad[at(l)] - dot));
                }
            }
        };
    }
    return res;
}

/// Divides entries by their sum along `axis`. Inputs must be nonnegative with
/// positive sums (used by Sinkhorn balancing and masked renormalization).
template <typename T>
Tensor<T> normalize(const Tensor<T>& x, std::size_t axis) {
    const auto v = detail::axis_view(x.shape(), axis);
    const auto in = x.data();
    std::vector<T> out(x.numel());
    std::vector<double> sums(v.outer * v.inner);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t q = 0; q < v.inner; ++q) {
            double s = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) s += in[(o * v.len + l) * v.inner + q];
            if (!(s > 0.0)) throw NumericError("normalize: non-positive sum along axis");
            sums[o * v.inner + q] = s;
            for (std::size_t l = 0; l < v.len; ++l) {
                const std::size_t idx = (o * v.len + l) * v.inner + q;
                out[idx] = static_cast<T>(in[idx] / s);
            }
        }
    }
    auto res = detail::make_result<T>(x.shape(), std::move(out), "normalize", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [v, sums = std::move(sums)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t o = 0; o < v.outer; ++o) {
                for (std::size_t q = 0; q < v.inner; ++q) {
                    const auto at = [&](std::size_t l) { return (o * v.len + l) * v.inner + q; };
                    double dot = 0.0;
                    for (std::size_t l = 0; l < v.len; ++l)
                        dot += static_cast<double>(self.grad[at(l)]) * self.data[at(l)];
                    const double s = sums[o * v.inner + q];
                    for (std::size_t l = 0; l < v.len; ++l)
                        p.grad[at(l)] += static_cast<T>((self.grad[at(l)] - dot) / s);
                }
            }
        };
    }
    return res;
}

/// Standardizes over the last axis, then applies gamma·x̂ + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
    if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
    const std::size_t c = x.cols();
    if (gamma.numel() != c || beta.numel() != c) throw DimensionError("layer_norm", x.shape(), gamma.shape());
    const std::size_t m = x.numel() / c;
    const auto in = x.data(), g = gamma.data(), b = beta.data();
    std::vector<T> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += in[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = in[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        rstd[i] = 1.0 / std::sqrt(var + static_cast<double>(eps));
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (in[i * c + j] - mean) * rstd[i];
            xhat[i * c + j] = h;
            out[i * c + j] = static_cast<T>(g[j] * h + b[j]);
        }
    }
    auto res = detail::make_result<T>(x.shape(), std::move(out), "layer_norm", {&x, &gamma, &beta});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& pg = *self.parents[1];
            Node<T>& pb = *self.parents[2];
            for (std::size_t i = 0; i < m; ++i) {
                double mean_d = 0.0, mean_dx = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double dy = self.grad[i * c + j];
                    if (pg.requires_grad) pg.grad[j] += static_cast<T>(dy * xhat[i * c + j]);
                    if (pb.requires_grad) pb.grad[j] += static_cast<T>(dy);
                    const double dh = dy * pg.data[j];
                    mean_d += dh;
                    mean_dx += dh * xhat[i * c + j];
                }
                if (!px.requires_grad) continue;
                mean_d /= static_cast<double>(c);
                mean_dx /= static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = self.grad[i * c + j] * static_cast<double>(pg.data[j]);
                    px.grad[i * c + j] += static_cast<T>(rstd[i] * (dh - mean_d - xhat[i * c + j] * mean_dx));
                }
            }
        };
    }
    return res;
}

/// Inverted dropout. Identity when not training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;
    std::vector<T> out(x.numel());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * mask[i];
    auto res = detail::make_result<T>(x.shape(), std::move(out), "dropout", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [mask = std::move(mask)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < mask.size(); ++i) p.grad[i] += self.grad[i] * mask[i];
        };
    }
    return res;
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat_last_axis(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_last_axis: no parts");
    const Shape& first = parts.front().shape();
    const std::size_t lead = parts.front().numel() / first.back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
            throw DimensionError("concat_last_axis", first, s);
        }
        widths.push_back(s.back());
        total += s.back();
    }
    std::vector<T> out(lead * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto src = parts[k].data();
        for (std::size_t i = 0; i < lead; ++i)
            std::copy_n(src.begin() + i * widths[k], widths[k], out.begin() + i * total + offset);
        offset += widths[k];
    }
    Shape shape = first;
    shape.back() = total;
    auto res = detail::make_result<T>(std::move(shape), std::move(out), "concat_last_axis", parts);
    if (res.requires_grad()) {
        res.node()->backward_fn = [lead, total, widths = std::move(widths)](Node<T>& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                Node<T>& p = *self.parents[k];
                if (p.requires_grad)
                    for (std::size_t i = 0; i < lead; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            p.grad[i * widths[k] + j] += self.grad[i * total + off + j];
                off += widths[k];
            }
        };
    }
    return res;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    const std::size_t c = parts.front().cols();
    std::size_t rows = 0;
    std::vector<std::size_t> sizes;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        if (p.cols() != c) throw DimensionError("concat_rows", parts.front().shape(), p.shape());
        rows += p.rows();
        sizes.push_back(p.numel());
    }
    std::vector<T> out;
    out.reserve(rows * c);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto res = detail::make_result<T>({rows, c}, std::move(out), "concat_rows", parts);
    if (res.requires_grad()) {
        res.node()->backward_fn = [sizes = std::move(sizes)](Node<T>& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < sizes.size(); ++k) {
                Node<T>& p = *self.parents[k];
                if (p.requires_grad)
                    for (std::size_t i = 0; i < sizes[k]; ++i) p.grad[i] += self.grad[off + i];
                off += sizes[k];
            }
        };
    }
    return res;
}

/// Columns [start, start + len) of a matrix.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_rank2(x, "slice_columns");
    const std::size_t m = x.rows(), c = x.cols();
    if (start + len > c || len == 0) {
        throw DimensionError("slice_columns: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") outside " + shape_str(x.shape()));
    }
    std::vector<T> out(m * len);
    const auto src = x.data();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(src.begin() + i * c + start, len, out.begin() + i * len);
    auto res = detail::make_result<T>({m, len}, std::move(out), "slice_columns", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, c, start, len](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < len; ++j) p.grad[i * c + start + j] += self.grad[i * len + j];
        };
    }
    return res;
}

/// Rows [start, start + len) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t len) {
    detail::require_rank2(x, "slice_rows");
    const std::size_t c = x.cols();
    if (start + len > x.rows() || len == 0) {
        throw DimensionError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") outside " + shape_str(x.shape()));
    }
    const auto src = x.data();
    std::vector<T> out(src.begin() + start * c, src.begin() + (start + len) * c);
    auto res = detail::make_result<T>({len, c}, std::move(out), "slice_rows", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [start, c](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[start * c + i] += self.grad[i];
        };
    }
    return res;
}

template <typename T>
Tensor<T> select_row(const Tensor<T>& x, std::size_t r) {
    return slice_rows(x, r, 1);
}

/// Rows x[idx[0]], x[idx[1]], ... stacked.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> idx) {
    detail::require_rank2(x, "gather_rows");
    if (idx.empty()) throw DimensionError("gather_rows: empty index list");
    const std::size_t c = x.cols();
    std::vector<T> out(idx.size() * c);
    const auto src = x.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows()) throw DimensionError("gather_rows: row index out of range");
        std::copy_n(src.begin() + idx[i] * c, c, out.begin() + i * c);
    }
    auto res = detail::make_result<T>({idx.size(), c}, std::move(out), "gather_rows", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [c, idx = std::move(idx)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) p.grad[idx[i] * c + j] += self.grad[i * c + j];
        };
    }
    return res;
}

/// Inverse of gather_rows: an n_rows×C matrix with row idx[i] = x[i]
/// (duplicates accumulate), zeros elsewhere.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, std::vector<std::size_t> idx, std::size_t n_rows) {
    detail::require_rank2(x, "scatter_rows");
    if (idx.size() != x.rows()) throw DimensionError("scatter_rows: index count must equal row count");
    const std::size_t c = x.cols();
    std::vector<T> out(n_rows * c, T(0));
    const auto src = x.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= n_rows) throw DimensionError("scatter_rows: row index out of range");
        for (std::size_t j = 0; j < c; ++j) out[idx[i] * c + j] += src[i * c + j];
    }
    auto res = detail::make_result<T>({n_rows, c}, std::move(out), "scatter_rows", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [c, idx = std::move(idx)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[idx[i] * c + j];
        };
    }
    return res;
}

/// Entries x[rows[i], cols[i]] as an n×1 column.
template <typename T>
Tensor<T> gather_entries(const Tensor<T>& x, std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
    detail::require_rank2(x, "gather_entries");
    if (rows.size() != cols.size() || rows.empty()) throw DimensionError("gather_entries: bad index lists");
    const std::size_t c = x.cols();
    std::vector<std::size_t> flat(rows.size());
    std::vector<T> out(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= x.rows() || cols[i] >= c) throw DimensionError("gather_entries: index out of range");
        flat[i] = rows[i] * c + cols[i];
        out[i] = x.data()[flat[i]];
    }
    auto res = detail::make_result<T>({rows.size(), 1}, std::move(out), "gather_entries", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [flat = std::move(flat)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < flat.size(); ++i) p.grad[flat[i]] += self.grad[i];
        };
    }
    return res;
}

/// Multiplies row i of an M×C matrix by s[i] (s is M×1).
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& x, const Tensor<T>& s) {
    detail::require_rank2(x, "scale_rows");
    if (s.numel() != x.rows()) throw DimensionError("scale_rows", x.shape(), s.shape());
    const std::size_t m = x.rows(), c = x.cols();
    std::vector<T> out(m * c);
    const auto src = x.data(), sv = s.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = src[i * c + j] * sv[i];
    auto res = detail::make_result<T>({m, c}, std::move(out), "scale_rows", {&x, &s});
    if (res.requires_grad()) {
        res.node()->backward_fn = [m, c](Node<T>& self) {
            Node<T>& px = *self.parents[0];
            Node<T>& ps = *self.parents[1];
            for (std::size_t i = 0; i < m; ++i) {
                double ds = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    if (px.requires_grad) px.grad[i * c + j] += self.grad[i * c + j] * ps.data[i];
                    ds += static_cast<double>(self.grad[i * c + j]) * px.data[i * c + j];
                }
                if (ps.requires_grad) ps.grad[i] += static_cast<T>(ds);
            }
        };
    }
    return res;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) throw DimensionError("reshape", x.shape(), shape);
    auto res = detail::make_result<T>(std::move(shape), x.to_vector(), "reshape", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [](Node<T>& self) { detail::accumulate<T>(*self.parents[0], self.grad); };
    }
    return res;
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum along `axis` of a matrix, keeping the reduced axis with extent 1.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::size_t axis) {
    detail::require_rank2(x, "reduce_sum");
    const auto v = detail::axis_view(x.shape(), axis);
    std::vector<double> acc(v.outer * v.inner, 0.0);
    const auto in = x.data();
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t l = 0; l < v.len; ++l)
            for (std::size_t q = 0; q < v.inner; ++q) acc[o * v.inner + q] += in[(o * v.len + l) * v.inner + q];
    Shape shape = x.shape();
    shape[axis] = 1;
    auto res = detail::make_result<T>(std::move(shape), std::vector<T>(acc.begin(), acc.end()), "reduce_sum", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [v](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t l = 0; l < v.len; ++l)
                    for (std::size_t q = 0; q < v.inner; ++q)
                        p.grad[(o * v.len + l) * v.inner + q] += self.grad[o * v.inner + q];
        };
    }
    return res;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::size_t axis) {
    const std::size_t len = detail::axis_view(x.shape(), axis).len;
    if (len == 0) throw DimensionError("reduce_mean: empty axis");
    return scale(reduce_sum(x, axis), static_cast<T>(1.0 / static_cast<double>(len)));
}

template <typename T>
struct MaxResult {
    Tensor<T> values;
    std::vector<std::size_t> argmax;
};

/// Max along `axis` of a matrix (ties resolve to the lowest index); gradient
/// flows only to the selected entry.
template <typename T>
MaxResult<T> reduce_max_with_argmax(const Tensor<T>& x, std::size_t axis) {
    detail::require_rank2(x, "reduce_max_with_argmax");
    const auto v = detail::axis_view(x.shape(), axis);
    if (v.len == 0) throw DimensionError("reduce_max_with_argmax: empty axis");
    const auto in = x.data();
    std::vector<T> out(v.outer * v.inner);
    std::vector<std::size_t> arg(v.outer * v.inner, 0);
    for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t q = 0; q < v.inner; ++q) {
            std::size_t best = 0;
            for (std::size_t l = 1; l < v.len; ++l)
                if (in[(o * v.len + l) * v.inner + q] > in[(o * v.len + best) * v.inner + q]) best = l;
            arg[o * v.inner + q] = best;
            out[o * v.inner + q] = in[(o * v.len + best) * v.inner + q];
        }
    }
    Shape shape = x.shape();
    shape[axis] = 1;
    auto res = detail::make_result<T>(std::move(shape), std::move(out), "reduce_max", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [v, arg](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t o = 0; o < v.outer; ++o)
                for (std::size_t q = 0; q < v.inner; ++q)
                    p.grad[(o * v.len + arg[o * v.inner + q]) * v.inner + q] += self.grad[o * v.inner + q];
        };
    }
    return {std::move(res), std::move(arg)};
}

/// Sum of all entries as a 1-element tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    double s = 0.0;
    for (T v : x.data()) s += v;
    auto res = detail::make_result<T>({1}, {static_cast<T>(s)}, "sum", {&x});
    if (res.requires_grad()) {
        res.node()->backward_fn = [](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (auto& g : p.grad) g += self.grad[0];
        };
    }
    return res;
}

/// Softmax cross-entropy of a logit vector (any shape with C entries)
/// against a class index.
template <typename T>
Tensor<T> cross_entropy_with_logits(const Tensor<T>& logits, std::size_t label) {
    const std::size_t c = logits.numel();
    if (label >= c) throw DimensionError("cross_entropy: label " + std::to_string(label) + " >= class count");
    const auto z = logits.data();
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : z) {
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("cross_entropy: non-finite logit");
        mx = std::max(mx, static_cast<double>(v));
    }
    double se = 0.0;
    for (T v : z) se += std::exp(v - mx);
    const double lse = mx + std::log(se);
    std::vector<T> probs(c);
    for (std::size_t i = 0; i < c; ++i) probs[i] = static_cast<T>(std::exp(z[i] - lse));
    auto res = detail::make_result<T>({1}, {static_cast<T>(lse - z[label])}, "cross_entropy", {&logits});
    if (res.requires_grad()) {
        res.node()->backward_fn = [label, probs = std::move(probs)](Node<T>& self) {
            Node<T>& p = *self.parents[0];
            for (std::size_t i = 0; i < probs.size(); ++i)
                p.grad[i] += self.grad[0] * (probs[i] - (i == label ? T(1) : T(0)));
        };
    }
    return res;
}

}  // namespace mammoth
