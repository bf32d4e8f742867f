#pragma once

// Sparse prompt encoding: positional encodings for points and box corners,
// learned label/corner embeddings, and the static token block.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pasam/diff/nn.hpp"
#include "pasam/sam/config.hpp"

namespace pasam {

struct PointPrompt {
    double x = 0, y = 0;  // pixel coordinates, origin top-left
    bool positive = true;
};

struct BoxPrompt {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

struct Prompts {
    std::vector<PointPrompt> points;
    std::optional<BoxPrompt> box;
};

enum class TokenRole { Iou, Mask, StaticRefine, StaticUncertain, Point, BoxCorner, SampledPoint };

inline const char* role_name(TokenRole r) {
    switch (r) {
        case TokenRole::Iou: return "iou";
        case TokenRole::Mask: return "mask";
        case TokenRole::StaticRefine: return "refine";
        case TokenRole::StaticUncertain: return "uncertain";
        case TokenRole::Point: return "point";
        case TokenRole::BoxCorner: return "box";
        case TokenRole::SampledPoint: return "sampled";
    }
    return "?";
}

/// Ordered token rows with one role tag per row.
template <class T>
struct SparseTokens {
    diff::Tensor<T> tokens;  // [n, C]
    std::vector<TokenRole> roles;

    std::size_t size() const { return roles.size(); }

    std::vector<std::size_t> indices_of(TokenRole r) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < roles.size(); ++i)
            if (roles[i] == r) out.push_back(i);
        return out;
    }

    std::size_t count(TokenRole r) const { return indices_of(r).size(); }
};

/// 2D sinusoidal encoding of normalized coordinates: the first C/2 channels
/// encode x, the rest y, each as C/4 (sin, cos) pairs at geometric frequencies
/// from pi to 64*pi.
template <class T>
std::vector<T> positional_encoding(double x, double y, std::size_t channels) {
    const std::size_t freqs = channels / 4;
    std::vector<T> out(channels);
    for (std::size_t axis = 0; axis < 2; ++axis) {
        const double c = axis == 0 ? x : y;
        for (std::size_t k = 0; k < freqs; ++k) {
            const double expo = freqs > 1 ? 6.0 * static_cast<double>(k) / static_cast<double>(freqs - 1) : 0.0;
            const double w = std::numbers::pi * std::pow(2.0, expo);
            out[axis * channels / 2 + 2 * k] = static_cast<T>(std::sin(w * c));
            out[axis * channels / 2 + 2 * k + 1] = static_cast<T>(std::cos(w * c));
        }
    }
    return out;
}

/// Positional encodings at grid cell centers, [h*w, C] row-major over cells.
template <class T>
diff::Tensor<T> grid_positional_encoding(std::size_t h, std::size_t w, std::size_t channels) {
    std::vector<T> v;
    v.reserve(h * w * channels);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            auto pe = positional_encoding<T>((static_cast<double>(j) + 0.5) / static_cast<double>(w),
                                             (static_cast<double>(i) + 0.5) / static_cast<double>(h), channels);
            v.insert(v.end(), pe.begin(), pe.end());
        }
    return diff::Tensor<T>(Shape{h * w, channels}, std::move(v));
}

namespace sam {

template <class T>
struct PromptEncoder {
    diff::Tensor<T> static_tokens;  // [3 + n_mask, C]: iou, masks..., refine, uncertain
    diff::Tensor<T> label_embed;    // [2, C]: negative, positive
    diff::Tensor<T> corner_embed;   // [2, C]: top-left, bottom-right
    std::size_t channels = 0, n_mask = 0, image_size = 0;

    PromptEncoder() = default;
    PromptEncoder(diff::Builder<T> b, const SamConfig& cfg)
        : channels(cfg.channels()), n_mask(cfg.decoder.n_mask_tokens), image_size(cfg.image_size) {
        static_tokens = b.normal("static_tokens", {3 + n_mask, channels}, 1.0);
        label_embed = b.normal("label_embed", {2, channels}, 1.0);
        corner_embed = b.normal("corner_embed", {2, channels}, 1.0);
    }

    std::vector<TokenRole> static_roles() const {
        std::vector<TokenRole> r{TokenRole::Iou};
        r.insert(r.end(), n_mask, TokenRole::Mask);
        r.push_back(TokenRole::StaticRefine);
        r.push_back(TokenRole::StaticUncertain);
        return r;
    }

    /// Token block t_in: static tokens, then one token per point, then two box corners.
    SparseTokens<T> operator()(const Prompts& prompts) const {
        const double size = static_cast<double>(image_size);
        auto check = [&](double v, const char* what) {
            if (!(v >= 0.0 && v <= size)) {
                throw InputError(std::string(what) + " coordinate " + std::to_string(v) + " outside [0, " +
                                 std::to_string(image_size) + "]");
            }
        };
        std::vector<diff::Tensor<T>> parts{static_tokens};
        SparseTokens<T> out;
        out.roles = static_roles();
        for (const auto& p : prompts.points) {
            check(p.x, "point");
            check(p.y, "point");
            diff::Tensor<T> pe({1, channels}, positional_encoding<T>(p.x / size, p.y / size, channels));
            parts.push_back(diff::add(pe, diff::slice_rows(label_embed, p.positive ? 1 : 0, p.positive ? 2 : 1)));
            out.roles.push_back(TokenRole::Point);
        }
        if (prompts.box) {
            const auto& bx = *prompts.box;
            for (double v : {bx.x0, bx.y0, bx.x1, bx.y1}) check(v, "box");
            diff::Tensor<T> pe0({1, channels}, positional_encoding<T>(bx.x0 / size, bx.y0 / size, channels));
            diff::Tensor<T> pe1({1, channels}, positional_encoding<T>(bx.x1 / size, bx.y1 / size, channels));
            parts.push_back(diff::add(pe0, diff::slice_rows(corner_embed, 0, 1)));
            parts.push_back(diff::add(pe1, diff::slice_rows(corner_embed, 1, 2)));
            out.roles.push_back(TokenRole::BoxCorner);
            out.roles.push_back(TokenRole::BoxCorner);
        }
        out.tokens = parts.size() == 1 ? static_tokens : diff::concat(parts, 0);
        return out;
    }
};

}  // namespace sam
}  // namespace pasam
