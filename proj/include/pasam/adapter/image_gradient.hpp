#pragma once

// Edge maps used as the gradient half of the adapter's guide input.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pasam/diff/tensor.hpp"

namespace pasam::adapter {

using diff::Tensor;

enum class EdgeOperator { Sobel, Canny };

namespace detail {

template <class T>
std::vector<double> grayscale(const Tensor<T>& image) {
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("image_gradient expects [3,H,W], got " + shape_str(image.shape()));
    const std::size_t hw = image.dim(1) * image.dim(2);
    std::vector<double> g(hw);
    const auto v = image.data();
    for (std::size_t i = 0; i < hw; ++i) g[i] = 0.299 * v[i] + 0.587 * v[hw + i] + 0.114 * v[2 * hw + i];
    return g;
}

// Sobel responses with edge-replicated borders.
inline void sobel(const std::vector<double>& img, std::size_t h, std::size_t w, std::vector<double>& gx,
                  std::vector<double>& gy) {
    gx.assign(h * w, 0.0);
    gy.assign(h * w, 0.0);
    auto at = [&](long y, long x) {
        y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
        x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
        return img[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    for (long y = 0; y < static_cast<long>(h); ++y)
        for (long x = 0; x < static_cast<long>(w); ++x) {
            const double sx = (at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1));
            const double sy = (at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1)) -
                              (at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1));
            gx[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = sx;
            gy[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] = sy;
        }
}

inline std::vector<double> blur3(const std::vector<double>& img, std::size_t h, std::size_t w) {
    static constexpr double k[3] = {0.25, 0.5, 0.25};
    std::vector<double> tmp(h * w), out(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (int d = -1; d <= 1; ++d) s += k[d + 1] * img[y * w + std::clamp<long>(long(x) + d, 0, long(w) - 1)];
            tmp[y * w + x] = s;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0;
            for (int d = -1; d <= 1; ++d) s += k[d + 1] * tmp[std::clamp<long>(long(y) + d, 0, long(h) - 1) * w + x];
            out[y * w + x] = s;
        }
    return out;
}

}  // namespace detail

/// Sobel gradient magnitude of the grayscale image normalized to [0,1], or a
/// binary Canny edge map (hysteresis at 0.1 / 0.2 of the maximum magnitude).
/// Output is [1,H,W] and carries no gradient.
template <class T>
Tensor<T> image_gradient(const Tensor<T>& image, EdgeOperator op = EdgeOperator::Sobel) {
    const std::size_t h = image.dim(1), w = image.dim(2);
    auto gray = detail::grayscale(image);
    if (op == EdgeOperator::Canny) gray = detail::blur3(gray, h, w);
    std::vector<double> gx, gy;
    detail::sobel(gray, h, w, gx, gy);
    std::vector<double> mag(h * w);
    for (std::size_t i = 0; i < h * w; ++i) mag[i] = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i]);
    const double mx = *std::max_element(mag.begin(), mag.end());
    std::vector<T> out(h * w, T(0));
    if (mx <= 1e-12) return Tensor<T>(Shape{1, h, w}, std::move(out));

    if (op == EdgeOperator::Sobel) {
        for (std::size_t i = 0; i < h * w; ++i) out[i] = static_cast<T>(mag[i] / mx);
        return Tensor<T>(Shape{1, h, w}, std::move(out));
    }

    // Non-maximum suppression along the quantized gradient direction.
    std::vector<double> thin(h * w, 0.0);
    for (std::size_t y = 1; y + 1 < h; ++y)
        for (std::size_t x = 1; x + 1 < w; ++x) {
            const std::size_t i = y * w + x;
            double angle = std::atan2(gy[i], gx[i]) * 180.0 / 3.14159265358979323846;
            if (angle < 0) angle += 180.0;
            std::size_t a, b;
            if (angle < 22.5 || angle >= 157.5) {
                a = i - 1, b = i + 1;
            } else if (angle < 67.5) {
                a = i - w + 1, b = i + w - 1;
            } else if (angle < 112.5) {
                a = i - w, b = i + w;
            } else {
                a = i - w - 1, b = i + w + 1;
            }
            if (mag[i] >= mag[a] && mag[i] >= mag[b]) thin[i] = mag[i];
        }
    const double lo = 0.1 * mx, hi = 0.2 * mx;
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (thin[i] >= hi) {
            out[i] = T(1);
            stack.push_back(i);
        }
    }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const long y = static_cast<long>(i / w), x = static_cast<long>(i % w);
        for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
                const long ny = y + dy, nx = x + dx;
                if (ny < 0 || nx < 0 || ny >= long(h) || nx >= long(w)) continue;
                const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
                if (out[j] == T(0) && thin[j] >= lo) {
                    out[j] = T(1);
                    stack.push_back(j);
                }
            }
    }
    return Tensor<T>(Shape{1, h, w}, std::move(out));
}

}  // namespace pasam::adapter
