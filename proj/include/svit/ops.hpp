#pragma once

// Differentiable operations on Array<T>. Each op computes its forward value
// eagerly and, when any input requires a gradient, registers a closure that
// accumulates into the inputs' gradient buffers.

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <utility>

#include "svit/array.hpp"

namespace svit {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw DimensionError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) + " differ");
}

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i > 1; --i) st[i - 2] = st[i - 1] * s[i - 1];
    return st;
}

// Maps each output flat index of a permutation to its source flat index.
inline std::vector<std::size_t> permute_index(const Shape& in, const std::vector<std::size_t>& axes) {
    const std::size_t r = in.size();
    const auto in_st = strides_of(in);
    Shape out(r);
    std::vector<std::size_t> src_st(r);
    for (std::size_t i = 0; i < r; ++i) {
        out[i] = in[axes[i]];
        src_st[i] = in_st[axes[i]];
    }
    const std::size_t total = numel(in);
    std::vector<std::size_t> map(total);
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < total; ++o) {
        map[o] = src;
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            src += src_st[d];
            if (idx[d] < out[d]) break;
            src -= src_st[d] * out[d];
            idx[d] = 0;
        }
    }
    return map;
}

template <class T, class F>
Array<T> unary(const Array<T>& x, F&& f) {
    std::vector<T> v(x.size());
    const auto& xs = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(xs[i]);
    return make_result<T>(x.shape(), std::move(v), {}, nullptr);
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] + b[i];
    auto an = a.node(), bn = b.node();
    return make_result<T>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<T>& self) {
        for (auto* p : {an.get(), bn.get()}) {
            if (!p->requires_grad) continue;
            T* g = p->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

template <class T>
Array<T> sub(const Array<T>& a, const Array<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] - b[i];
    auto an = a.node(), bn = b.node();
    return make_result<T>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            T* g = an->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

template <class T>
Array<T> mul(const Array<T>& a, const Array<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * b[i];
    auto an = a.node(), bn = b.node();
    return make_result<T>(a.shape(), std::move(v), {a, b}, [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
            T* g = an->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an->value[i];
        }
    });
}

template <class T>
Array<T> scale(const Array<T>& a, T s) {
    std::vector<T> v(a.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a[i] * s;
    auto an = a.node();
    return make_result<T>(a.shape(), std::move(v), {a}, [an, s](detail::Node<T>& self) {
        T* g = an->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
    });
}

template <class T>
Array<T> operator+(const Array<T>& a, const Array<T>& b) { return add(a, b); }
template <class T>
Array<T> operator-(const Array<T>& a, const Array<T>& b) { return sub(a, b); }
template <class T>
Array<T> operator*(const Array<T>& a, const Array<T>& b) { return mul(a, b); }

// x[..., n] + bias[n]
template <class T>
Array<T> add_bias(const Array<T>& x, const Array<T>& bias) {
    const std::size_t n = bias.size();
    if (bias.rank() != 1 || x.dim(-1) != n) {
        throw DimensionError("add_bias: bias " + to_string(bias.shape()) + " vs input " + to_string(x.shape()));
    }
    std::vector<T> v(x.values());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += bias[i % n];
    auto xn = x.node(), bn = bias.node();
    return make_result<T>(x.shape(), std::move(v), {x, bias}, [xn, bn, n](detail::Node<T>& self) {
        if (xn->requires_grad) {
            T* g = xn->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
    });
}

template <class T>
Array<T> relu(const Array<T>& x) {
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x[i] > T(0) ? x[i] : T(0);
    auto xn = x.node();
    return make_result<T>(x.shape(), std::move(v), {x}, [xn](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (xn->value[i] > T(0)) g[i] += self.grad[i];
        }
    });
}

// Exact (erf) GELU.
template <class T>
Array<T> gelu(const Array<T>& x) {
    const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
    std::vector<T> v(x.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = T(0.5) * x[i] * (T(1) + std::erf(x[i] * inv_sqrt2));
    auto xn = x.node();
    return make_result<T>(x.shape(), std::move(v), {x}, [xn, inv_sqrt2](detail::Node<T>& self) {
        const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
        T* g = xn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const T z = xn->value[i];
            const T cdf = T(0.5) * (T(1) + std::erf(z * inv_sqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * z * z);
            g[i] += self.grad[i] * (cdf + z * pdf);
        }
    });
}

// ---------------------------------------------------------------- reductions

template <class T>
Array<T> sum(const Array<T>& x) {
    T s = 0;
    for (T e : x.data()) s += e;
    auto xn = x.node();
    return make_result<T>({1}, {s}, {x}, [xn](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t i = 0; i < xn->value.size(); ++i) g[i] += self.grad[0];
    });
}

template <class T>
Array<T> mean(const Array<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

// Mean squared difference, a scalar.
template <class T>
Array<T> mse(const Array<T>& a, const Array<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mse");
    const std::size_t n = a.size();
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a[i] - b[i];
        s += d * d;
    }
    auto an = a.node(), bn = b.node();
    return make_result<T>({1}, {s / static_cast<T>(n)}, {a, b}, [an, bn, n](detail::Node<T>& self) {
        const T k = T(2) * self.grad[0] / static_cast<T>(n);
        if (an->requires_grad) {
            T* g = an->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) g[i] += k * (an->value[i] - bn->value[i]);
        }
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) g[i] -= k * (an->value[i] - bn->value[i]);
        }
    });
}

// ---------------------------------------------------------------- shape ops

template <class T>
Array<T> reshape(const Array<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    auto xn = x.node();
    return make_result<T>(std::move(shape), x.values(), {x}, [xn](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <class T>
Array<T> permute(const Array<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) throw DimensionError("permute: axis count mismatch for " + to_string(x.shape()));
    std::vector<bool> used(r, false);
    for (auto a : axes) {
        if (a >= r || used[a]) throw DimensionError("permute: invalid axes for " + to_string(x.shape()));
        used[a] = true;
    }
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) out[i] = x.shape()[axes[i]];
    auto map = std::make_shared<std::vector<std::size_t>>(detail::permute_index(x.shape(), axes));
    std::vector<T> v(x.size());
    const auto& xs = x.values();
    for (std::size_t o = 0; o < v.size(); ++o) v[o] = xs[(*map)[o]];
    auto xn = x.node();
    return make_result<T>(std::move(out), std::move(v), {x}, [xn, map](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*map)[o]] += self.grad[o];
    });
}

// Swaps the last two axes.
template <class T>
Array<T> transpose(const Array<T>& x) {
    if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
    std::vector<std::size_t> axes(x.rank());
    std::iota(axes.begin(), axes.end(), std::size_t{0});
    std::swap(axes[x.rank() - 1], axes[x.rank() - 2]);
    return permute(x, axes);
}

// x[..., begin:end, ...] along `axis`.
template <class T>
Array<T> slice(const Array<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank() || begin >= end || end > x.shape()[axis]) {
        throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + to_string(x.shape()));
    }
    Shape out = x.shape();
    out[axis] = end - begin;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
    for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
    const std::size_t full = x.shape()[axis], len = end - begin;
    std::vector<T> v(numel(out));
    const auto& xs = x.values();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>((o * full + begin) * inner), len * inner,
                    v.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
    }
    auto xn = x.node();
    return make_result<T>(std::move(out), std::move(v), {x}, [=](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t o = 0; o < outer; ++o) {
            const T* src = self.grad.data() + o * len * inner;
            T* dst = g + (o * full + begin) * inner;
            for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
    });
}

template <class T>
Array<T> concat(const std::vector<Array<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of nothing");
    Shape out = parts[0].shape();
    if (axis >= out.size()) throw DimensionError("concat: axis out of range");
    out[axis] = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != parts[0].shape()[i]) {
                throw DimensionError("concat: " + to_string(s) + " vs " + to_string(parts[0].shape()));
            }
        }
        out[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
    for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
    std::vector<T> v(numel(out));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t len = p.shape()[axis];
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(o * len * inner), len * inner,
                        v.begin() + static_cast<std::ptrdiff_t>((o * out[axis] + off) * inner));
        }
        off += len;
    }
    std::vector<typename Array<T>::NodePtr> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    const std::size_t total = out[axis];
    return make_result<T>(std::move(out), std::move(v), parts, [=](detail::Node<T>& self) {
        for (std::size_t k = 0; k < nodes.size(); ++k) {
            if (!nodes[k]->requires_grad) continue;
            const std::size_t len = nodes[k]->shape[axis];
            T* g = nodes[k]->grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                const T* src = self.grad.data() + (o * total + offsets[k]) * inner;
                T* dst = g + o * len * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        }
    });
}

// ---------------------------------------------------------------- linear algebra

// a[..., m, k] x b[..., k, n]. Leading extents must agree, or one operand is
// a plain matrix that is broadcast over the other's leading extents.
template <class T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
    if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
        throw DimensionError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
    }
    const Shape ab(a.shape().begin(), a.shape().end() - 2);
    const Shape bb(b.shape().begin(), b.shape().end() - 2);
    if (!ab.empty() && !bb.empty() && ab != bb) {
        throw DimensionError("matmul: batch extents of " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                             " are not broadcastable");
    }
    const std::size_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
    const Shape batch = ab.empty() ? bb : ab;
    const std::size_t nb = numel(batch);
    const std::size_t sa = ab.empty() ? 0 : m * k;
    const std::size_t sb = bb.empty() ? 0 : k * n;
    Shape out = batch;
    out.push_back(m);
    out.push_back(n);
    std::vector<T> v(nb * m * n);
    for (std::size_t i = 0; i < nb; ++i) {
        detail::CMapMat<T> A(a.values().data() + i * sa, m, k);
        detail::CMapMat<T> B(b.values().data() + i * sb, k, n);
        detail::MapMat<T> C(v.data() + i * m * n, m, n);
        C.noalias() = A * B;
    }
    auto an = a.node(), bn = b.node();
    return make_result<T>(std::move(out), std::move(v), {a, b}, [=](detail::Node<T>& self) {
        for (std::size_t i = 0; i < nb; ++i) {
            detail::CMapMat<T> G(self.grad.data() + i * m * n, m, n);
            if (an->requires_grad) {
                detail::MapMat<T> dA(an->grad_buffer() + i * sa, m, k);
                detail::CMapMat<T> B(bn->value.data() + i * sb, k, n);
                dA.noalias() += G * B.transpose();
            }
            if (bn->requires_grad) {
                detail::MapMat<T> dB(bn->grad_buffer() + i * sb, k, n);
                detail::CMapMat<T> A(an->value.data() + i * sa, m, k);
                dB.noalias() += A.transpose() * G;
            }
        }
    });
}

// x[..., in] * w[in, out] + b[out]
template <class T>
Array<T> linear(const Array<T>& x, const Array<T>& w, const Array<T>& b) {
    return add_bias(matmul(x, w), b);
}

// ---------------------------------------------------------------- normalization

// Max-subtracted softmax over the last axis.
template <class T>
Array<T> softmax_lastaxis(const Array<T>& x) {
    const std::size_t n = x.dim(-1);
    const std::size_t rows = x.size() / n;
    std::vector<T> v(x.size());
    const auto& xs = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xs.data() + r * n;
        T* out = v.data() + r * n;
        const T mx = *std::max_element(in, in + n);
        T s = 0;
        for (std::size_t j = 0; j < n; ++j) {
            out[j] = std::exp(in[j] - mx);
            s += out[j];
        }
        for (std::size_t j = 0; j < n; ++j) out[j] /= s;
    }
    auto xn = x.node();
    return make_result<T>(x.shape(), std::move(v), {x}, [xn, n, rows](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * n;
            const T* dy = self.grad.data() + r * n;
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
        }
    });
}

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
Array<T> layer_norm(const Array<T>& x, const Array<T>& gain, const Array<T>& bias) {
    const std::size_t d = x.dim(-1);
    if (d < 2) throw DimensionError("layer_norm needs a last extent >= 2, got " + to_string(x.shape()));
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw DimensionError("layer_norm: gain/bias " + to_string(gain.shape()) + " vs input " + to_string(x.shape()));
    }
    const std::size_t rows = x.size() / d;
    std::vector<T> v(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto rstd = std::make_shared<std::vector<T>>(rows);
    const auto& xs = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xs.data() + r * d;
        T mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + T(kLayerNormEps));
        (*rstd)[r] = rs;
        for (std::size_t j = 0; j < d; ++j) {
            const T h = (in[j] - mu) * rs;
            (*xhat)[r * d + j] = h;
            v[r * d + j] = h * gain[j] + bias[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    return make_result<T>(x.shape(), std::move(v), {x, gain, bias}, [=](detail::Node<T>& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
            T* g = gn->grad_buffer();
            for (std::size_t i = 0; i < dy.size(); ++i) g[i % d] += dy[i] * (*xhat)[i];
        }
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t i = 0; i < dy.size(); ++i) g[i % d] += dy[i];
        }
        if (xn->requires_grad) {
            T* g = xn->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                T m1 = 0, m2 = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T dh = dy[r * d + j] * gn->value[j];
                    m1 += dh;
                    m2 += dh * (*xhat)[r * d + j];
                }
                m1 /= static_cast<T>(d);
                m2 /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const T dh = dy[r * d + j] * gn->value[j];
                    g[r * d + j] += (*rstd)[r] * (dh - m1 - (*xhat)[r * d + j] * m2);
                }
            }
        }
    });
}

inline constexpr double kVarianceFloor = 1e-5;

// Per-channel spatial mean and population std of x[c, H, W]; the variance is
// floored before the square root.
template <class T>
std::pair<Array<T>, Array<T>> channel_stats(const Array<T>& x) {
    if (x.rank() != 3) throw DimensionError("channel_stats expects [c,H,W], got " + to_string(x.shape()));
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    std::vector<T> mu(c), sigma(c);
    auto floored = std::make_shared<std::vector<bool>>(c);
    const auto& xs = x.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* in = xs.data() + ch * hw;
        T m = 0;
        for (std::size_t i = 0; i < hw; ++i) m += in[i];
        m /= static_cast<T>(hw);
        T var = 0;
        for (std::size_t i = 0; i < hw; ++i) var += (in[i] - m) * (in[i] - m);
        var /= static_cast<T>(hw);
        (*floored)[ch] = var <= T(kVarianceFloor);
        mu[ch] = m;
        sigma[ch] = std::sqrt(std::max(var, T(kVarianceFloor)));
    }
    auto xn = x.node();
    auto mu_arr = make_result<T>({c}, std::move(mu), {x}, [xn, c, hw](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) {
            const T k = self.grad[ch] / static_cast<T>(hw);
            for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += k;
        }
    });
    auto mu_node = mu_arr.node();
    auto sigma_arr = make_result<T>({c}, std::move(sigma), {x}, [xn, c, hw, floored, mu_node](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t ch = 0; ch < c; ++ch) {
            if ((*floored)[ch]) continue;
            const T m = mu_node->value[ch];
            const T k = self.grad[ch] / (self.value[ch] * static_cast<T>(hw));
            for (std::size_t i = 0; i < hw; ++i) g[ch * hw + i] += k * (xn->value[ch * hw + i] - m);
        }
    });
    return {mu_arr, sigma_arr};
}

// ---------------------------------------------------------------- spatial

// Stride-1 cross-correlation of x[c_in, H, W] with w[c_out, c_in, k, k] plus
// bias b[c_out], zero padding on all sides.
template <class T>
Array<T> conv2d(const Array<T>& x, const Array<T>& w, const Array<T>& b, std::size_t padding) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        throw DimensionError("conv2d: expected x[c,H,W], w[o,c,k,k], b[o]; got " + to_string(x.shape()) + ", " +
                             to_string(w.shape()) + ", " + to_string(b.shape()));
    }
    const std::size_t cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin) {
        throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, kernel " + to_string(w.shape()));
    }
    if (w.dim(3) != k || b.dim(0) != cout) throw DimensionError("conv2d: malformed kernel/bias");
    if (H + 2 * padding < k || W + 2 * padding < k) throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t Ho = H + 2 * padding - k + 1, Wo = W + 2 * padding - k + 1;
    const std::size_t K = cin * k * k, P = Ho * Wo;

    // im2col: rows indexed (ci, ky, kx), columns by output pixel.
    auto cols = std::make_shared<std::vector<T>>(K * P, T(0));
    const auto& xs = x.values();
    for (std::size_t ci = 0; ci < cin; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols->data() + ((ci * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                        row[oy * Wo + ox] = xs[(ci * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
    std::vector<T> v(cout * P);
    {
        detail::CMapMat<T> Wm(w.values().data(), cout, K);
        detail::CMapMat<T> C(cols->data(), K, P);
        detail::MapMat<T> O(v.data(), cout, P);
        O.noalias() = Wm * C;
        for (std::size_t o = 0; o < cout; ++o) O.row(static_cast<Eigen::Index>(o)).array() += b[o];
    }
    auto xn = x.node(), wn = w.node(), bn = b.node();
    return make_result<T>({cout, Ho, Wo}, std::move(v), {x, w, b}, [=](detail::Node<T>& self) {
        detail::CMapMat<T> G(self.grad.data(), cout, P);
        if (bn->requires_grad) {
            T* g = bn->grad_buffer();
            for (std::size_t o = 0; o < cout; ++o) g[o] += G.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (wn->requires_grad) {
            detail::MapMat<T> dW(wn->grad_buffer(), cout, K);
            detail::CMapMat<T> C(cols->data(), K, P);
            dW.noalias() += G * C.transpose();
        }
        if (xn->requires_grad) {
            std::vector<T> dcols(K * P);
            detail::MapMat<T> dC(dcols.data(), K, P);
            detail::CMapMat<T> Wm(wn->value.data(), cout, K);
            dC.noalias() = Wm.transpose() * G;
            T* g = xn->grad_buffer();
            for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const T* row = dcols.data() + ((ci * k + ky) * k + kx) * P;
                        for (std::size_t oy = 0; oy < Ho; ++oy) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            for (std::size_t ox = 0; ox < Wo; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                g[(ci * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] += row[oy * Wo + ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

// Non-overlapping max pooling of x[c, H, W] with a square window.
template <class T>
Array<T> max_pool2d(const Array<T>& x, std::size_t window = 2) {
    if (x.rank() != 3) throw DimensionError("max_pool2d expects [c,H,W], got " + to_string(x.shape()));
    const std::size_t c = x.dim(0), H = x.dim(1), W = x.dim(2);
    const std::size_t Ho = H / window, Wo = W / window;
    if (Ho == 0 || Wo == 0) throw DimensionError("max_pool2d: input " + to_string(x.shape()) + " smaller than window");
    std::vector<T> v(c * Ho * Wo);
    auto arg = std::make_shared<std::vector<std::size_t>>(v.size());
    const auto& xs = x.values();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox) {
                std::size_t best = (ch * H + oy * window) * W + ox * window;
                for (std::size_t dy = 0; dy < window; ++dy) {
                    for (std::size_t dx = 0; dx < window; ++dx) {
                        const std::size_t idx = (ch * H + oy * window + dy) * W + ox * window + dx;
                        if (xs[idx] > xs[best]) best = idx;
                    }
                }
                const std::size_t o = (ch * Ho + oy) * Wo + ox;
                v[o] = xs[best];
                (*arg)[o] = best;
            }
        }
    }
    auto xn = x.node();
    return make_result<T>({c, Ho, Wo}, std::move(v), {x}, [xn, arg](detail::Node<T>& self) {
        T* g = xn->grad_buffer();
        for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*arg)[o]] += self.grad[o];
    });
}

}  // namespace svit
