#pragma once

// Synthetic thin-structure segmentation data: composite objects with thin
// protrusions and holes on textured backgrounds, plus degraded prompts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pasam/diff/tensor.hpp"
#include "pasam/sam/prompt_encoder.hpp"
#include "pasam/seed.hpp"
#include "pasam/training/morphology.hpp"

namespace pasam::training {

struct GeometryConfig {
    std::size_t resolution = 128;
    std::size_t min_shapes = 1, max_shapes = 3;
    std::size_t min_protrusions = 1, max_protrusions = 3;
    std::size_t min_protrusion_width = 1, max_protrusion_width = 3;
    double hole_probability = 0.5;
    std::size_t max_distractors = 2;
    double box_jitter = 0.05;  // fraction of box size, outward only
    std::size_t max_points = 3;
    std::size_t max_coarse_radius = 3;
    std::size_t uncertain_radius = 3;

    void validate() const {
        if (resolution < 32 || resolution % 16 != 0) throw ConfigError("resolution must be a multiple of 16, >= 32");
        if (min_shapes < 1 || min_shapes > max_shapes) throw ConfigError("bad shape count range");
        if (min_protrusion_width < 1 || min_protrusion_width > max_protrusion_width) throw ConfigError("bad protrusion width range");
        if (min_protrusions > max_protrusions) throw ConfigError("bad protrusion count range");
        if (max_points < 1) throw ConfigError("max_points must be >= 1");
        if (max_coarse_radius < 1) throw ConfigError("max_coarse_radius must be >= 1");
        if (uncertain_radius < 1) throw ConfigError("uncertain_radius must be >= 1");
    }
};

enum class CoarseOp { Erode, Dilate };

struct Sample {
    std::size_t size = 0;
    diff::Tensor<float> image;         // [3,H,W], values k/255
    diff::Tensor<float> gt_mask;       // [1,H,W] binary
    diff::Tensor<float> gt_uncertain;  // [1,H,W] binary
    diff::Tensor<float> coarse_mask;   // [1,H,W] binary dense prompt
    Prompts prompts;
    CoarseOp coarse_op = CoarseOp::Erode;
    std::size_t coarse_radius = 1;
};

inline BinaryMask to_binary(const diff::Tensor<float>& m) {
    BinaryMask out(m.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.data()[i] > 0.5f ? 1 : 0;
    return out;
}

inline diff::Tensor<float> from_binary(const BinaryMask& m, std::size_t h, std::size_t w) {
    std::vector<float> v(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0f : 0.0f;
    return diff::Tensor<float>(Shape{1, h, w}, std::move(v));
}

namespace detail {

struct Canvas {
    std::size_t n;
    BinaryMask m;
    explicit Canvas(std::size_t n_) : n(n_), m(n_ * n_, 0) {}
    void set(long y, long x, std::uint8_t v) {
        if (y >= 0 && x >= 0 && y < long(n) && x < long(n)) m[std::size_t(y) * n + std::size_t(x)] = v;
    }
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
inline std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

struct Blob {
    double cx, cy, radius;
};

// Rotated ellipse or star-shaped polygon.
inline Blob draw_shape(Canvas& c, std::mt19937_64& rng, std::uint8_t value, double min_r, double max_r) {
    const double n = double(c.n);
    const double r = uniform(rng, min_r, max_r);
    const double cx = uniform(rng, r + 4, n - r - 4), cy = uniform(rng, r + 4, n - r - 4);
    if (uniform(rng, 0, 1) < 0.5) {
        const double a = r, b = r * uniform(rng, 0.45, 1.0), th = uniform(rng, 0, std::numbers::pi);
        const double ct = std::cos(th), st = std::sin(th);
        for (std::size_t y = 0; y < c.n; ++y)
            for (std::size_t x = 0; x < c.n; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double u = (dx * ct + dy * st) / a, v = (-dx * st + dy * ct) / b;
                if (u * u + v * v <= 1.0) c.m[y * c.n + x] = value;
            }
    } else {
        const std::size_t k = uniform_int(rng, 3, 7);
        std::vector<double> px(k), py(k);
        const double base = uniform(rng, 0, 2 * std::numbers::pi);
        for (std::size_t i = 0; i < k; ++i) {
            const double ang = base + 2 * std::numbers::pi * (double(i) + uniform(rng, -0.3, 0.3)) / double(k);
            const double rr = r * uniform(rng, 0.55, 1.0);
            px[i] = cx + rr * std::cos(ang);
            py[i] = cy + rr * std::sin(ang);
        }
        for (std::size_t y = 0; y < c.n; ++y)
            for (std::size_t x = 0; x < c.n; ++x) {
                const double X = x + 0.5, Y = y + 0.5;
                bool inside = false;
                for (std::size_t i = 0, j = k - 1; i < k; j = i++) {
                    if ((py[i] > Y) != (py[j] > Y) && X < (px[j] - px[i]) * (Y - py[i]) / (py[j] - py[i]) + px[i]) inside = !inside;
                }
                if (inside) c.m[y * c.n + x] = value;
            }
    }
    return {cx, cy, r};
}

// Straight or gently bent stroke of the given pixel width leaving the blob.
inline void draw_protrusion(Canvas& c, std::mt19937_64& rng, const Blob& b, std::size_t width) {
    const double ang = uniform(rng, 0, 2 * std::numbers::pi);
    const double len = uniform(rng, 0.6, 1.6) * b.radius + 6.0;
    const double bend = uniform(rng, -0.6, 0.6);
    const double start = b.radius * 0.5;
    const std::size_t steps = std::size_t(len * 3);
    for (std::size_t s = 0; s <= steps; ++s) {
        const double t = double(s) / double(steps);
        const double a = ang + bend * t;
        const double d = start + t * len;
        const long x0 = long(std::floor(b.cx + d * std::cos(a))) - long(width / 2);
        const long y0 = long(std::floor(b.cy + d * std::sin(a))) - long(width / 2);
        for (std::size_t i = 0; i < width; ++i)
            for (std::size_t j = 0; j < width; ++j) c.set(y0 + long(i), x0 + long(j), 1);
    }
}

// Low-frequency colour texture: a few random plane waves per channel.
inline void texture(std::vector<double>& img, std::size_t n, std::mt19937_64& rng, const double base[3], double amp,
                    const BinaryMask* where) {
    for (std::size_t ch = 0; ch < 3; ++ch) {
        double fx[3], fy[3], ph[3];
        for (int k = 0; k < 3; ++k) {
            fx[k] = uniform(rng, -3, 3) * 2 * std::numbers::pi / double(n);
            fy[k] = uniform(rng, -3, 3) * 2 * std::numbers::pi / double(n);
            ph[k] = uniform(rng, 0, 2 * std::numbers::pi);
        }
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                if (where && !(*where)[y * n + x]) continue;
                double v = base[ch];
                for (int k = 0; k < 3; ++k) v += amp / 3.0 * std::sin(fx[k] * x + fy[k] * y + ph[k]);
                img[(ch * n + y) * n + x] = v;
            }
    }
}

inline std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) { return mix_seed(seed, index, 0); }

}  // namespace detail

/// One sample, a pure function of (geometry, seed, index).
inline Sample generate_sample(const GeometryConfig& g, std::uint64_t seed, std::uint64_t index) {
    using namespace detail;
    g.validate();
    std::mt19937_64 rng(sample_seed(seed, index));
    const std::size_t n = g.resolution;
    const double scale = double(n) / 128.0;

    Canvas gt(n);
    for (;;) {
        std::fill(gt.m.begin(), gt.m.end(), 0);
        const std::size_t shapes = uniform_int(rng, g.min_shapes, g.max_shapes);
        std::vector<Blob> blobs;
        for (std::size_t s = 0; s < shapes; ++s) blobs.push_back(draw_shape(gt, rng, 1, 10 * scale, 26 * scale));
        if (uniform(rng, 0, 1) < g.hole_probability) {
            const auto& b = blobs[uniform_int(rng, 0, blobs.size() - 1)];
            Canvas hole(n);
            Blob hb{b.cx + uniform(rng, -0.3, 0.3) * b.radius, b.cy + uniform(rng, -0.3, 0.3) * b.radius, 0};
            const double hr = uniform(rng, 2.0, std::max(2.5, 0.35 * b.radius));
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    const double dx = x + 0.5 - hb.cx, dy = y + 0.5 - hb.cy;
                    if (dx * dx + dy * dy <= hr * hr) gt.m[y * n + x] = 0;
                }
        }
        const std::size_t prot = uniform_int(rng, g.min_protrusions, g.max_protrusions);
        for (std::size_t p = 0; p < prot; ++p) {
            draw_protrusion(gt, rng, blobs[uniform_int(rng, 0, blobs.size() - 1)],
                            uniform_int(rng, g.min_protrusion_width, g.max_protrusion_width));
        }
        const std::size_t fg = count_set(gt.m);
        if (fg >= 1 && fg < n * n) break;  // degenerate geometry: redraw
    }

    // Image: textured background, distractors, then the textured object.
    std::vector<double> img(3 * n * n);
    double bg[3], obj[3];
    for (;;) {
        double dist = 0;
        for (int ch = 0; ch < 3; ++ch) {
            bg[ch] = uniform(rng, 0.15, 0.85);
            obj[ch] = uniform(rng, 0.1, 0.9);
            dist += std::abs(bg[ch] - obj[ch]);
        }
        if (dist >= 0.6) break;
    }
    texture(img, n, rng, bg, 0.25, nullptr);
    const std::size_t distractors = uniform_int(rng, 0, g.max_distractors);
    for (std::size_t d = 0; d < distractors; ++d) {
        Canvas dm(n);
        auto blob = draw_shape(dm, rng, 1, 5 * scale, 14 * scale);
        if (uniform(rng, 0, 1) < 0.5) draw_protrusion(dm, rng, blob, uniform_int(rng, 1, 3));
        double col[3];
        for (int ch = 0; ch < 3; ++ch) col[ch] = uniform(rng, 0.1, 0.9);
        texture(img, n, rng, col, 0.1, &dm.m);
    }
    texture(img, n, rng, obj, 0.15, &gt.m);

    std::vector<float> pixels(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) {
        const long q = std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0);
        pixels[i] = float(q) / 255.0f;
    }

    Sample s;
    s.size = n;
    s.image = diff::Tensor<float>(Shape{3, n, n}, std::move(pixels));
    s.gt_mask = from_binary(gt.m, n, n);
    s.gt_uncertain = from_binary(boundary_dilate(gt.m, n, n, g.uncertain_radius), n, n);

    // Box: tight bounds, pushed outward by up to box_jitter of the box extent.
    std::size_t x0 = n, y0 = n, x1 = 0, y1 = 0;
    std::vector<std::size_t> fg_pixels;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
            if (gt.m[y * n + x]) {
                x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x + 1), y1 = std::max(y1, y + 1);
                fg_pixels.push_back(y * n + x);
            }
    const double bw = double(x1 - x0), bh = double(y1 - y0), lim = double(n);
    BoxPrompt box;
    box.x0 = std::max(0.0, double(x0) - uniform(rng, 0, g.box_jitter) * bw);
    box.y0 = std::max(0.0, double(y0) - uniform(rng, 0, g.box_jitter) * bh);
    box.x1 = std::min(lim, double(x1) + uniform(rng, 0, g.box_jitter) * bw);
    box.y1 = std::min(lim, double(y1) + uniform(rng, 0, g.box_jitter) * bh);
    s.prompts.box = box;

    // Points from the interior (eroded mask when it is non-empty).
    auto interior = erode(gt.m, n, n, 1);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < n * n; ++i)
        if (interior[i]) candidates.push_back(i);
    if (candidates.empty()) candidates = fg_pixels;
    const std::size_t np = uniform_int(rng, 1, g.max_points);
    for (std::size_t p = 0; p < np; ++p) {
        const std::size_t i = candidates[uniform_int(rng, 0, candidates.size() - 1)];
        s.prompts.points.push_back({double(i % n) + 0.5, double(i / n) + 0.5, true});
    }

    s.coarse_radius = uniform_int(rng, 1, g.max_coarse_radius);
    s.coarse_op = uniform(rng, 0, 1) < 0.5 ? CoarseOp::Erode : CoarseOp::Dilate;
    auto coarse = s.coarse_op == CoarseOp::Erode ? erode(gt.m, n, n, s.coarse_radius) : dilate(gt.m, n, n, s.coarse_radius);
    if (count_set(coarse) == 0) {
        s.coarse_op = CoarseOp::Dilate;
        coarse = dilate(gt.m, n, n, s.coarse_radius);
    }
    s.coarse_mask = from_binary(coarse, n, n);
    return s;
}

inline std::vector<Sample> generate_dataset(std::size_t count, const GeometryConfig& g, std::uint64_t seed) {
    if (count < 1) throw ParameterError("generate_dataset needs n >= 1");
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_sample(g, seed, i));
    return out;
}

}  // namespace pasam::training
