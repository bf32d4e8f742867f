#pragma once

#include <string>

#include "pasam/diff/nn.hpp"
#include "pasam/sam/config.hpp"

namespace pasam::sam {

using diff::Tensor;

/// Four stride-2 3x3 convolutions with GELU between stages: [c,H,W] -> [C,H/16,W/16].
template <class T>
struct StridedEncoder {
    diff::Conv<T> stages[4];

    StridedEncoder() = default;
    StridedEncoder(diff::Builder<T> b, std::size_t in, const std::vector<std::size_t>& widths, std::size_t out) {
        const std::size_t dims[5] = {in, widths[0], widths[1], widths[2], out};
        for (std::size_t s = 0; s < 4; ++s)
            stages[s] = diff::Conv<T>(b.scope("stage" + std::to_string(s)), dims[s], dims[s + 1], 3, 2, 1);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (x.rank() != 3 || x.dim(1) % 16 != 0 || x.dim(2) % 16 != 0) {
            throw ConfigError("encoder input " + shape_str(x.shape()) + " must be [c,H,W] with H, W divisible by 16");
        }
        auto h = x;
        for (std::size_t s = 0; s < 4; ++s) {
            h = stages[s](h);
            if (s < 3) h = diff::gelu(h);
        }
        return h;
    }
};

/// Stand-in image encoder: [3,H,W] -> ImageFeature x of shape [C,H/16,W/16].
template <class T>
struct ImageEncoder {
    StridedEncoder<T> net;

    ImageEncoder() = default;
    ImageEncoder(diff::Builder<T> b, const SamConfig& cfg) : net(b, 3, cfg.encoder_widths, cfg.channels()) {}

    Tensor<T> operator()(const Tensor<T>& image) const {
        if (image.rank() != 3 || image.dim(0) != 3) {
            throw ConfigError("image must be [3,H,W], got " + shape_str(image.shape()));
        }
        return net(image);
    }
};

/// Dense prompt from a coarse mask: [1,H,W] -> [C,H/16,W/16].
template <class T>
struct MaskEncoder {
    StridedEncoder<T> net;

    MaskEncoder() = default;
    MaskEncoder(diff::Builder<T> b, const SamConfig& cfg) : net(b, 1, cfg.mask_encoder_widths, cfg.channels()) {}

    Tensor<T> operator()(const Tensor<T>& mask) const {
        if (mask.rank() != 3 || mask.dim(0) != 1) {
            throw ConfigError("mask prompt must be [1,H,W], got " + shape_str(mask.shape()));
        }
        for (std::size_t i = 0; i < mask.numel(); ++i) {
            const T v = mask.data()[i];
            if (!(v >= T(0) && v <= T(1))) throw InputError("mask prompt value outside [0,1] at index " + std::to_string(i));
        }
        return net(mask);
    }
};

}  // namespace pasam::sam
