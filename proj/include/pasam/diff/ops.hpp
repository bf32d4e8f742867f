#pragma once

// Differentiable operation set. Only scalar-to-tensor broadcasting is
// supported; every other shape mismatch raises DimensionError.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pasam/diff/tensor.hpp"

namespace pasam::diff {

namespace detail {

// C[m,n] += A[m,k] * B[k,n]; all row-major, contiguous.
template <class T>
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

template <class T>
std::vector<T> transposed(const T* a, std::size_t rows, std::size_t cols) {
    std::vector<T> t(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
    return t;
}

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
};

inline ConvGeometry conv_geometry(std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                  std::size_t stride, std::size_t pad) {
    if (stride == 0) throw ParameterError("conv stride must be positive");
    if (kh > h + 2 * pad || kw > w + 2 * pad) {
        throw ParameterError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " exceeds padded input " + std::to_string(h + 2 * pad) + "x" +
                             std::to_string(w + 2 * pad));
    }
    return {c, h, w, kh, kw, stride, pad, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1};
}

// [c,h,w] image -> [c*kh*kw, out_h*out_w] patch matrix.
template <class T>
std::vector<T> im2col(const T* img, const ConvGeometry& g) {
    const std::size_t cols = g.out_h * g.out_w;
    std::vector<T> out(g.channels * g.kh * g.kw * cols, T(0));
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                T* row = out.data() + ((c * g.kh + ki) * g.kw + kj) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
                        row[oy * g.out_w + ox] = src[ix];
                    }
                }
            }
    return out;
}

// Adjoint of im2col: scatter-adds patch columns back into a [c,h,w] image.
template <class T>
void col2im_acc(const T* col, const ConvGeometry& g, T* img) {
    const std::size_t cols = g.out_h * g.out_w;
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t ki = 0; ki < g.kh; ++ki)
            for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const T* row = col + ((c * g.kh + ki) * g.kw + kj) * cols;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
                        if (ix < 0 || ix >= static_cast<long>(g.width)) continue;
                        dst[ix] += row[oy * g.out_w + ox];
                    }
                }
            }
}

template <class T>
void require_rank(const Tensor<T>& t, std::size_t r, const char* op) {
    if (t.rank() != r) {
        throw DimensionError(std::string(op) + " expects rank " + std::to_string(r) + ", got shape " +
                             shape_str(t.shape()));
    }
}

enum class BinaryKind { Add, Sub, Mul };

template <class T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind, const char* name) {
    const bool same = a.shape() == b.shape();
    const bool a_scalar = a.numel() == 1 && !same;
    const bool b_scalar = b.numel() == 1 && !same;
    if (!same && !a_scalar && !b_scalar) {
        throw DimensionError(std::string(name) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const Shape shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(shape);
    const auto& av = a.values();
    const auto& bv = b.values();
    auto ai = [&](std::size_t i) { return a_scalar ? av[0] : av[i]; };
    auto bi = [&](std::size_t i) { return b_scalar ? bv[0] : bv[i]; };
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        switch (kind) {
            case BinaryKind::Add: out[i] = ai(i) + bi(i); break;
            case BinaryKind::Sub: out[i] = ai(i) - bi(i); break;
            case BinaryKind::Mul: out[i] = ai(i) * bi(i); break;
        }
    }
    return make_result<T>(shape, std::move(out), {a, b}, [a, b, kind, a_scalar, b_scalar, n](Node<T>& self) {
        const auto& g = self.grad;
        if (T* ga = grad_sink(a)) {
            for (std::size_t i = 0; i < n; ++i) {
                T d = kind == BinaryKind::Mul ? g[i] * (b_scalar ? b.values()[0] : b.values()[i]) : g[i];
                ga[a_scalar ? 0 : i] += d;
            }
        }
        if (T* gb = grad_sink(b)) {
            for (std::size_t i = 0; i < n; ++i) {
                T d = kind == BinaryKind::Mul   ? g[i] * (a_scalar ? a.values()[0] : a.values()[i])
                      : kind == BinaryKind::Sub ? -g[i]
                                                : g[i];
                gb[b_scalar ? 0 : i] += d;
            }
        }
    });
}

// Pointwise unary op given f(x) and f'(x, f(x)).
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
    const auto& xv = x.values();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_result<T>(x.shape(), std::move(out), {x}, [x, df](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            const auto& xv = x.values();
            for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.value[i]);
        }
    });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::Add, "add"); }
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::Sub, "sub"); }
/// Hadamard product.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::binary(a, b, detail::BinaryKind::Mul, "mul"); }

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> one_minus(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!(xv[i] > T(0))) {
            throw DomainError("log of non-positive entry " + std::to_string(static_cast<double>(xv[i])) +
                              " at index " + std::to_string(i));
        }
    }
    return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> reciprocal(const Tensor<T>& x) {
    const auto& xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] == T(0)) throw DomainError("reciprocal of zero at index " + std::to_string(i));
    }
    return detail::unary(x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

/// Gradient passes only where the input lies inside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary(
        x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
        [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// tanh approximation of GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
    constexpr T c = T(0.044715);
    return detail::unary(
        x,
        [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
        [](T v, T) {
            const T u = k * (v + c * v * v * v);
            const T th = std::tanh(u);
            const T du = k * (T(1) + T(3) * c * v * v);
            return T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du;
        });
}

/// Forward value is the input, bitwise; no gradient flows through.
template <class T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
    return x.detach();
}

// ---------------------------------------------------------------- reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T s = T(0);
    for (T v : x.values()) s += v;
    return make_result<T>(Shape{}, {s}, {x}, [x](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += self.grad[0];
        }
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// [m,n] -> [1,n] column means.
template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    detail::require_rank(x, 2, "mean_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(n, T(0));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += x.values()[i * n + j];
    for (auto& v : out) v /= static_cast<T>(m);
    return make_result<T>(Shape{1, n}, std::move(out), {x}, [x, m, n](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += self.grad[j] / static_cast<T>(m);
        }
    });
}

// ---------------------------------------------------------------- linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    detail::gemm_acc(m, n, k, a.values().data(), b.values().data(), out.data());
    return make_result<T>(Shape{m, n}, std::move(out), {a, b}, [a, b, m, n, k](Node<T>& self) {
        if (T* ga = grad_sink(a)) {
            auto bt = detail::transposed(b.values().data(), k, n);
            detail::gemm_acc(m, k, n, self.grad.data(), bt.data(), ga);
        }
        if (T* gb = grad_sink(b)) {
            auto at = detail::transposed(a.values().data(), m, k);
            detail::gemm_acc(k, n, m, at.data(), self.grad.data(), gb);
        }
    });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    detail::require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    auto out = detail::transposed(a.values().data(), m, n);
    return make_result<T>(Shape{n, m}, std::move(out), {a}, [a, m, n](Node<T>& self) {
        if (T* ga = grad_sink(a)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
        }
    });
}

/// x[m,k] * w[k,n] + bias[n] (bias added to every row).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    auto y = matmul(x, w);
    const std::size_t m = y.dim(0), n = y.dim(1);
    if (bias.numel() != n) {
        throw DimensionError("linear: bias " + shape_str(bias.shape()) + " does not match output width " +
                             std::to_string(n));
    }
    std::vector<T> out(y.values());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.values()[j];
    return make_result<T>(Shape{m, n}, std::move(out), {y, bias}, [y, bias, m, n](Node<T>& self) {
        if (T* gy = grad_sink(y)) {
            for (std::size_t i = 0; i < m * n; ++i) gy[i] += self.grad[i];
        }
        if (T* gb = grad_sink(bias)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
    });
}

/// exp(x_i/tau) / sum_j exp(x_j/tau) over all entries, max-subtracted.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, T temperature) {
    if (!(temperature > T(0))) {
        throw ParameterError("softmax temperature must be positive, got " +
                             std::to_string(static_cast<double>(temperature)));
    }
    const auto& xv = x.values();
    const T mx = *std::max_element(xv.begin(), xv.end());
    std::vector<T> out(xv.size());
    T z = T(0);
    for (std::size_t i = 0; i < xv.size(); ++i) z += (out[i] = std::exp((xv[i] - mx) / temperature));
    for (auto& v : out) v /= z;
    return make_result<T>(x.shape(), std::move(out), {x}, [x, temperature](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            T dot = T(0);
            for (std::size_t i = 0; i < self.value.size(); ++i) dot += self.grad[i] * self.value[i];
            for (std::size_t i = 0; i < self.value.size(); ++i)
                gx[i] += self.value[i] * (self.grad[i] - dot) / temperature;
        }
    });
}

/// Row-wise softmax of scale * x.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, T scale_factor) {
    detail::require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<T> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.values().data() + i * n;
        T* o = out.data() + i * n;
        T mx = row[0];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T z = T(0);
        for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp((row[j] - mx) * scale_factor));
        for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    }
    return make_result<T>(Shape{m, n}, std::move(out), {x}, [x, m, n, scale_factor](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < m; ++i) {
                const T* y = self.value.data() + i * n;
                const T* g = self.grad.data() + i * n;
                T dot = T(0);
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += scale_factor * y[j] * (g[j] - dot);
            }
        }
    });
}

/// Normalizes each row of x[m,n] to zero mean / unit variance, then applies gain and bias.
template <class T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5)) {
    detail::require_rank(x, 2, "layer_norm_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    if (gain.numel() != n || bias.numel() != n) {
        throw DimensionError("layer_norm_rows: affine params do not match width " + std::to_string(n));
    }
    std::vector<T> xhat(m * n), inv_std(m), out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x.values().data() + i * n;
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<T>(n);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gain.values()[j] + bias.values()[j];
        }
    }
    return make_result<T>(
        Shape{m, n}, std::move(out), {x, gain, bias},
        [x, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            T* gx = grad_sink(x);
            T* gg = grad_sink(gain);
            T* gb = grad_sink(bias);
            std::vector<T> dxhat(n);
            for (std::size_t i = 0; i < m; ++i) {
                const T* g = self.grad.data() + i * n;
                const T* xh = xhat.data() + i * n;
                T mean_d = T(0), mean_dx = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    if (gg) gg[j] += g[j] * xh[j];
                    if (gb) gb[j] += g[j];
                    dxhat[j] = g[j] * gain.values()[j];
                    mean_d += dxhat[j];
                    mean_dx += dxhat[j] * xh[j];
                }
                if (!gx) continue;
                mean_d /= static_cast<T>(n);
                mean_dx /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += inv_std[i] * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        });
}

// ---------------------------------------------------------------- spatial

/// Cross-correlation of x[c_in,h,w] with kernel[c_out,c_in,kh,kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
    detail::require_rank(x, 3, "conv2d input");
    detail::require_rank(kernel, 4, "conv2d kernel");
    if (kernel.dim(1) != x.dim(0)) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                             shape_str(x.shape()));
    }
    const auto g = detail::conv_geometry(x.dim(0), x.dim(1), x.dim(2), kernel.dim(2), kernel.dim(3), stride, padding);
    const std::size_t co = kernel.dim(0), kdim = g.channels * g.kh * g.kw, cols = g.out_h * g.out_w;
    auto col = detail::im2col(x.values().data(), g);
    std::vector<T> out(co * cols, T(0));
    detail::gemm_acc(co, cols, kdim, kernel.values().data(), col.data(), out.data());
    return make_result<T>(Shape{co, g.out_h, g.out_w}, std::move(out), {x, kernel},
                          [x, kernel, g, co, kdim, cols, col = std::move(col)](Node<T>& self) {
                              if (T* gk = grad_sink(kernel)) {
                                  auto colt = detail::transposed(col.data(), kdim, cols);
                                  detail::gemm_acc(co, kdim, cols, self.grad.data(), colt.data(), gk);
                              }
                              if (T* gx = grad_sink(x)) {
                                  auto kt = detail::transposed(kernel.values().data(), co, kdim);
                                  std::vector<T> dcol(kdim * cols, T(0));
                                  detail::gemm_acc(kdim, cols, co, kt.data(), self.grad.data(), dcol.data());
                                  detail::col2im_acc(dcol.data(), g, gx);
                              }
                          });
}

/// Adds bias[c] to every pixel of channel c of x[c,h,w].
template <class T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require_rank(x, 3, "add_channel_bias");
    const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
    if (bias.numel() != c) throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs " + shape_str(x.shape()));
    std::vector<T> out(x.values());
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] += bias.values()[ch];
    return make_result<T>(x.shape(), std::move(out), {x, bias}, [x, bias, c, hw](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < c * hw; ++i) gx[i] += self.grad[i];
        }
        if (T* gb = grad_sink(bias)) {
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i) gb[ch] += self.grad[ch * hw + i];
        }
    });
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    return add_channel_bias(conv2d(x, kernel, stride, padding), bias);
}

/// Transposed convolution (no padding): x[c_in,h,w], kernel[c_in,c_out,kh,kw]
/// -> [c_out, (h-1)*stride+kh, (w-1)*stride+kw].
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride) {
    detail::require_rank(x, 3, "conv_transpose2d input");
    detail::require_rank(kernel, 4, "conv_transpose2d kernel");
    if (kernel.dim(0) != x.dim(0)) {
        throw DimensionError("conv_transpose2d: kernel " + shape_str(kernel.shape()) + " does not match input " +
                             shape_str(x.shape()));
    }
    if (stride == 0) throw ParameterError("conv_transpose2d stride must be positive");
    const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t co = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::size_t oh = (h - 1) * stride + kh, ow = (w - 1) * stride + kw;
    // The output geometry viewed as a conv input whose im2col has one column per input pixel.
    const detail::ConvGeometry g{co, oh, ow, kh, kw, stride, 0, h, w};
    const std::size_t kdim = co * kh * kw, hw = h * w;
    auto kt = detail::transposed(kernel.values().data(), ci, kdim);
    std::vector<T> cols(kdim * hw, T(0));
    detail::gemm_acc(kdim, hw, ci, kt.data(), x.values().data(), cols.data());
    std::vector<T> out(co * oh * ow, T(0));
    detail::col2im_acc(cols.data(), g, out.data());
    return make_result<T>(Shape{co, oh, ow}, std::move(out), {x, kernel},
                          [x, kernel, g, ci, kdim, hw](Node<T>& self) {
                              auto dcols = detail::im2col(self.grad.data(), g);
                              if (T* gx = grad_sink(x)) {
                                  detail::gemm_acc(ci, hw, kdim, kernel.values().data(), dcols.data(), gx);
                              }
                              if (T* gk = grad_sink(kernel)) {
                                  auto dct = detail::transposed(dcols.data(), kdim, hw);
                                  detail::gemm_acc(ci, kdim, hw, x.values().data(), dct.data(), gk);
                              }
                          });
}

/// Bilinear resize of x[c,h,w] to [c,out_h,out_w] (half-pixel centers, edge clamp).
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    detail::require_rank(x, 3, "upsample_bilinear");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    struct Tap {
        std::size_t i0, i1;
        T f;
    };
    auto taps = [](std::size_t in, std::size_t out) {
        std::vector<Tap> t(out);
        const double ratio = static_cast<double>(in) / static_cast<double>(out);
        for (std::size_t o = 0; o < out; ++o) {
            double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
            if (src < 0) src = 0;
            auto i0 = static_cast<std::size_t>(src);
            if (i0 > in - 1) i0 = in - 1;
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            t[o] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
        }
        return t;
    };
    auto ty = taps(h, out_h), tx = taps(w, out_w);
    std::vector<T> out(c * out_h * out_w);
    const T* xv = x.values().data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = xv + ch * h * w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& b = tx[ox];
                const T top = src[a.i0 * w + b.i0] * (T(1) - b.f) + src[a.i0 * w + b.i1] * b.f;
                const T bot = src[a.i1 * w + b.i0] * (T(1) - b.f) + src[a.i1 * w + b.i1] * b.f;
                out[(ch * out_h + oy) * out_w + ox] = top * (T(1) - a.f) + bot * a.f;
            }
        }
    }
    return make_result<T>(Shape{c, out_h, out_w}, std::move(out), {x},
                          [x, c, h, w, out_h, out_w, ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
                              T* gx = grad_sink(x);
                              if (!gx) return;
                              for (std::size_t ch = 0; ch < c; ++ch) {
                                  T* dst = gx + ch * h * w;
                                  for (std::size_t oy = 0; oy < out_h; ++oy) {
                                      const auto& a = ty[oy];
                                      for (std::size_t ox = 0; ox < out_w; ++ox) {
                                          const auto& b = tx[ox];
                                          const T g = self.grad[(ch * out_h + oy) * out_w + ox];
                                          dst[a.i0 * w + b.i0] += g * (T(1) - a.f) * (T(1) - b.f);
                                          dst[a.i0 * w + b.i1] += g * (T(1) - a.f) * b.f;
                                          dst[a.i1 * w + b.i0] += g * a.f * (T(1) - b.f);
                                          dst[a.i1 * w + b.i1] += g * a.f * b.f;
                                      }
                                  }
                              }
                          });
}

// ---------------------------------------------------------------- shape

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    }
    return make_result<T>(std::move(shape), x.values(), {x}, [x](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
    return reshape(x, Shape{x.numel()});
}

/// Concatenates along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    const Shape& ref = parts.front().shape();
    if (axis >= ref.size()) throw BoundsError("concat axis " + std::to_string(axis) + " for shape " + shape_str(ref));
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != ref.size()) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
        for (std::size_t d = 0; d < ref.size(); ++d) {
            if (d != axis && p.dim(d) != ref[d]) {
                throw DimensionError("concat: " + shape_str(p.shape()) + " vs " + shape_str(ref) + " on axis " +
                                     std::to_string(axis));
            }
        }
        total += p.dim(axis);
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
    for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
    Shape shape = ref;
    shape[axis] = total;
    std::vector<T> out(shape_numel(shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t span = p.dim(axis) * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.values().data() + o * span, span, out.data() + o * total * inner + offset);
        offset += span;
    }
    return make_result<T>(std::move(shape), std::move(out), parts, [parts, outer, inner, total](Node<T>& self) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t span = p.numel() / outer;
            if (T* gp = grad_sink(p)) {
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < span; ++i) gp[o * span + i] += self.grad[o * total * inner + offset + i];
            }
            offset += span;
        }
    });
}

template <class T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_rank(x, 2, "slice_rows");
    if (begin >= end || end > x.dim(0)) {
        throw BoundsError("slice_rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(x.shape()));
    }
    const std::size_t n = x.dim(1);
    std::vector<T> out(x.values().begin() + begin * n, x.values().begin() + end * n);
    return make_result<T>(Shape{end - begin, n}, std::move(out), {x}, [x, begin, n](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * n + i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_rank(x, 2, "slice_cols");
    if (begin >= end || end > x.dim(1)) {
        throw BoundsError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(x.shape()));
    }
    const std::size_t m = x.dim(0), n = x.dim(1), k = end - begin;
    std::vector<T> out(m * k);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = x.values()[i * n + begin + j];
    return make_result<T>(Shape{m, k}, std::move(out), {x}, [x, begin, m, n, k](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) gx[i * n + begin + j] += self.grad[i * k + j];
        }
    });
}

/// Rows of x[m,n] at `indices` -> [k,n]; differentiable through x.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::size_t>& indices) {
    detail::require_rank(x, 2, "gather_rows");
    if (indices.empty()) throw ContractError("gather_rows with no indices");
    const std::size_t m = x.dim(0), n = x.dim(1);
    for (auto i : indices) {
        if (i >= m) throw BoundsError("gather_rows index " + std::to_string(i) + " out of range " + std::to_string(m));
    }
    std::vector<T> out(indices.size() * n);
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(x.values().data() + indices[r] * n, n, out.data() + r * n);
    return make_result<T>(Shape{indices.size(), n}, std::move(out), {x}, [x, indices, n](Node<T>& self) {
        if (T* gx = grad_sink(x)) {
            for (std::size_t r = 0; r < indices.size(); ++r)
                for (std::size_t j = 0; j < n; ++j) gx[indices[r] * n + j] += self.grad[r * n + j];
        }
    });
}

/// Copy of base[m,n] with rows at `indices` replaced by (or, with accumulate,
/// incremented by) the rows of src[k,n].
template <class T>
Tensor<T> index_put_rows(const Tensor<T>& base, const Tensor<T>& src, const std::vector<std::size_t>& indices,
                         bool accumulate) {
    detail::require_rank(base, 2, "index_put_rows base");
    detail::require_rank(src, 2, "index_put_rows src");
    const std::size_t m = base.dim(0), n = base.dim(1);
    if (src.dim(1) != n || src.dim(0) != indices.size()) {
        throw DimensionError("index_put_rows: src " + shape_str(src.shape()) + " for " + std::to_string(indices.size()) +
                             " rows of " + shape_str(base.shape()));
    }
    std::vector<bool> hit(m, false);
    for (auto i : indices) {
        if (i >= m) throw BoundsError("index_put_rows index " + std::to_string(i) + " out of range " + std::to_string(m));
        if (hit[i] && !accumulate) throw ContractError("index_put_rows: duplicate row " + std::to_string(i));
        hit[i] = true;
    }
    std::vector<T> out(base.values());
    for (std::size_t r = 0; r < indices.size(); ++r)
        for (std::size_t j = 0; j < n; ++j) {
            T& dst = out[indices[r] * n + j];
            dst = accumulate ? dst + src.values()[r * n + j] : src.values()[r * n + j];
        }
    return make_result<T>(Shape{m, n}, std::move(out), {base, src},
                          [base, src, indices, n, accumulate, hit = std::move(hit)](Node<T>& self) {
                              if (T* gb = grad_sink(base)) {
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      if (accumulate || !hit[i / n]) gb[i] += self.grad[i];
                              }
                              if (T* gs = grad_sink(src)) {
                                  for (std::size_t r = 0; r < indices.size(); ++r)
                                      for (std::size_t j = 0; j < n; ++j) gs[r * n + j] += self.grad[indices[r] * n + j];
                              }
                          });
}

/// [c,h,w] feature map -> [h*w, c] token rows.
template <class T>
Tensor<T> channels_to_rows(const Tensor<T>& x) {
    detail::require_rank(x, 3, "channels_to_rows");
    return transpose(reshape(x, Shape{x.dim(0), x.dim(1) * x.dim(2)}));
}

/// [h*w, c] token rows -> [c,h,w] feature map.
template <class T>
Tensor<T> rows_to_channels(const Tensor<T>& rows, std::size_t h, std::size_t w) {
    detail::require_rank(rows, 2, "rows_to_channels");
    if (rows.dim(0) != h * w) throw DimensionError("rows_to_channels: " + shape_str(rows.shape()) + " for grid " + std::to_string(h) + "x" + std::to_string(w));
    return reshape(transpose(rows), Shape{rows.dim(1), h, w});
}

// ---------------------------------------------------------------- index utilities (not differentiable)

template <class T = float>
Tensor<T> one_hot(std::size_t index, std::size_t n) {
    if (index >= n) throw BoundsError("one_hot index " + std::to_string(index) + " out of range " + std::to_string(n));
    std::vector<T> v(n, T(0));
    v[index] = T(1);
    return Tensor<T>(Shape{n}, std::move(v));
}

/// Indicator vector of an index set.
template <class T = float>
Tensor<T> one_hot(const std::vector<std::size_t>& indices, std::size_t n) {
    std::vector<T> v(n, T(0));
    for (auto i : indices) {
        if (i >= n) throw BoundsError("one_hot index " + std::to_string(i) + " out of range " + std::to_string(n));
        v[i] = T(1);
    }
    return Tensor<T>(Shape{n}, std::move(v));
}

/// First index of the maximum entry.
template <class T>
std::size_t argmax(const Tensor<T>& x) {
    const auto& v = x.values();
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Indices of the k largest entries, largest first; ties resolve to the lower index.
template <class T>
std::vector<std::size_t> top_k_indices(const Tensor<T>& x, std::size_t k) {
    if (k > x.numel()) throw BoundsError("top_k k=" + std::to_string(k) + " exceeds " + std::to_string(x.numel()));
    std::vector<std::size_t> idx(x.numel());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto& v = x.values();
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
    idx.resize(k);
    return idx;
}

}  // namespace pasam::diff
