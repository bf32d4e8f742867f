#pragma once

// Binary mask morphology on row-major h*w grids (values 0/1).

#include <cstdint>
#include <vector>

#include "pasam/diff/error.hpp"

namespace pasam::training {

using BinaryMask = std::vector<std::uint8_t>;

/// Pixels whose 4-neighbourhood contains the opposite label; neighbours
/// outside the image are ignored.
inline BinaryMask boundary_pixels(const BinaryMask& m, std::size_t h, std::size_t w) {
    BinaryMask out(h * w, 0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const auto v = m[y * w + x];
            const bool edge = (y > 0 && m[(y - 1) * w + x] != v) || (y + 1 < h && m[(y + 1) * w + x] != v) ||
                              (x > 0 && m[y * w + x - 1] != v) || (x + 1 < w && m[y * w + x + 1] != v);
            out[y * w + x] = edge ? 1 : 0;
        }
    return out;
}

/// Chebyshev dilation with a (2r+1)^2 square, done as two separable passes.
inline BinaryMask dilate(const BinaryMask& m, std::size_t h, std::size_t w, std::size_t r) {
    BinaryMask tmp(h * w, 0), out(h * w, 0);
    for (std::size_t y = 0; y < h; ++y) {
        long last = -1'000'000;  // column of the most recent set pixel seen so far
        for (std::size_t x = 0; x < w + r; ++x) {
            if (x < w && m[y * w + x]) last = long(x);
            if (x >= r && long(x) - last <= long(2 * r)) tmp[y * w + x - r] = 1;
        }
    }
    for (std::size_t x = 0; x < w; ++x) {
        long last = -1'000'000;
        for (std::size_t y = 0; y < h + r; ++y) {
            if (y < h && tmp[y * w + x]) last = long(y);
            if (y >= r && long(y) - last <= long(2 * r)) out[(y - r) * w + x] = 1;
        }
    }
    return out;
}

/// Chebyshev erosion; pixels outside the image count as background.
inline BinaryMask erode(const BinaryMask& m, std::size_t h, std::size_t w, std::size_t r) {
    BinaryMask inv(h * w);
    for (std::size_t i = 0; i < h * w; ++i) inv[i] = m[i] ? 0 : 1;
    // Pad by r so the outside acts as background, dilate the complement, crop.
    const std::size_t ph = h + 2 * r, pw = w + 2 * r;
    BinaryMask padded(ph * pw, 1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) padded[(y + r) * pw + x + r] = inv[y * w + x];
    auto grown = dilate(padded, ph, pw, r);
    BinaryMask out(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out[y * w + x] = grown[(y + r) * pw + x + r] ? 0 : 1;
    return out;
}

/// Every pixel within Chebyshev distance d of a boundary pixel.
inline BinaryMask boundary_dilate(const BinaryMask& m, std::size_t h, std::size_t w, std::size_t d) {
    if (d < 1) throw ParameterError("boundary_dilate radius must be >= 1");
    if (m.size() != h * w) throw DimensionError("boundary_dilate: mask size does not match " + std::to_string(h) + "x" + std::to_string(w));
    return dilate(boundary_pixels(m, h, w), h, w, d);
}

inline std::size_t count_set(const BinaryMask& m) {
    std::size_t n = 0;
    for (auto v : m) n += v ? 1 : 0;
    return n;
}

}  // namespace pasam::training
