#pragma once

// Two-block attention mask decoder with a hook between each block's token
// self-attention and its token-to-image cross-attention.

#include <cmath>
#include <string>
#include <vector>

#include "pasam/diff/nn.hpp"
#include "pasam/sam/attention.hpp"
#include "pasam/sam/config.hpp"
#include "pasam/sam/prompt_encoder.hpp"

namespace pasam::sam {

/// Mutable decoder state visible to a hook.
template <class T>
struct DecoderStreams {
    Tensor<T> tokens;    // [n, C]
    std::vector<TokenRole> roles;
    Tensor<T> query_pe;  // [n, C], added to tokens wherever they act as queries or keys
    Tensor<T> image;     // [h*w, C]
    Tensor<T> image_pe;  // [h*w, C]
    std::size_t h = 0, w = 0;
};

template <class T>
class BlockHook {
public:
    virtual ~BlockHook() = default;
    virtual void apply(std::size_t block, DecoderStreams<T>& streams) = 0;
};

template <class T>
struct DecodeResult {
    Tensor<T> mask;         // M_SAM probabilities, [H/4, W/4]
    Tensor<T> mask_logits;  // same shape, pre-sigmoid
    Tensor<T> iou_pred;     // scalar in (0,1)
};

template <class T>
struct DecoderBlock {
    Attention<T> self_attn, token_to_image, image_to_token;
    diff::LayerNorm<T> norm1, norm2, norm3, norm4;
    diff::Mlp<T> mlp;

    DecoderBlock() = default;
    DecoderBlock(diff::Builder<T> b, const DecoderConfig& cfg)
        : self_attn(b.scope("self_attn"), cfg.channels, cfg.heads),
          token_to_image(b.scope("t2i"), cfg.channels, cfg.heads),
          image_to_token(b.scope("i2t"), cfg.channels, cfg.heads),
          norm1(b.scope("norm1"), cfg.channels),
          norm2(b.scope("norm2"), cfg.channels),
          norm3(b.scope("norm3"), cfg.channels),
          norm4(b.scope("norm4"), cfg.channels),
          mlp(b.scope("mlp"), cfg.channels, cfg.mlp_width, cfg.channels) {}

    void forward(DecoderStreams<T>& s, BlockHook<T>* hook, std::size_t index) const {
        using namespace diff;
        auto q = add(s.tokens, s.query_pe);
        s.tokens = norm1(add(s.tokens, self_attn(q, q, s.tokens)));
        if (hook) hook->apply(index, s);
        q = add(s.tokens, s.query_pe);
        auto keys = add(s.image, s.image_pe);
        s.tokens = norm2(add(s.tokens, token_to_image(q, keys, s.image)));
        s.tokens = norm3(add(s.tokens, mlp(s.tokens)));
        q = add(s.tokens, s.query_pe);
        keys = add(s.image, s.image_pe);
        s.image = norm4(add(s.image, image_to_token(keys, q, s.tokens)));
    }
};

template <class T>
struct MaskDecoder {
    DecoderConfig cfg;
    std::vector<DecoderBlock<T>> blocks;
    diff::ConvTranspose<T> upscale1, upscale2;
    diff::Mlp<T> hypernet, iou_head;

    MaskDecoder() = default;
    MaskDecoder(diff::Builder<T> b, const DecoderConfig& cfg_) : cfg(cfg_) {
        for (std::size_t i = 0; i < cfg.n_blocks; ++i) blocks.emplace_back(b.scope("block" + std::to_string(i)), cfg);
        auto up = b.with_group(diff::ParamGroup::Upsampler);
        upscale1 = diff::ConvTranspose<T>(up.scope("upscale1"), cfg.channels, cfg.channels / 4, 2, 2);
        upscale2 = diff::ConvTranspose<T>(up.scope("upscale2"), cfg.channels / 4, cfg.channels / 8, 2, 2);
        hypernet = diff::Mlp<T>(b.scope("hypernet"), cfg.channels, cfg.channels, cfg.channels / 8);
        iou_head = diff::Mlp<T>(b.scope("iou_head"), cfg.channels, cfg.channels, 1);
    }

    /// `feature` is the encoder output, `dense_prompt` the mask-prompt encoding
    /// (same shape). With a hook, it runs in every block enabled by the config.
    DecodeResult<T> decode(const Tensor<T>& feature, const Tensor<T>& dense_prompt, const SparseTokens<T>& tokens,
                           BlockHook<T>* hook = nullptr) const {
        using namespace diff;
        if (feature.shape() != dense_prompt.shape()) {
            throw DimensionError("decode: feature " + shape_str(feature.shape()) + " vs dense prompt " +
                                 shape_str(dense_prompt.shape()));
        }
        if (feature.rank() != 3 || feature.dim(0) != cfg.channels) {
            throw DimensionError("decode: feature must be [" + std::to_string(cfg.channels) + ",h,w], got " +
                                 shape_str(feature.shape()));
        }
        const auto mask = cfg.adapter_mask();
        if (hook) {
            bool any = false;
            for (bool m : mask) any = any || m;
            if (!any) throw ConfigError("adapter attached but adapter_blocks enables no decoder block");
        }

        DecoderStreams<T> s;
        s.h = feature.dim(1);
        s.w = feature.dim(2);
        s.image = channels_to_rows(add(feature, dense_prompt));
        s.image_pe = grid_positional_encoding<T>(s.h, s.w, cfg.channels);
        s.tokens = tokens.tokens;
        s.roles = tokens.roles;
        s.query_pe = tokens.tokens;
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].forward(s, mask[i] ? hook : nullptr, i);

        std::size_t iou_row = s.roles.size(), mask_row = s.roles.size();
        for (std::size_t i = s.roles.size(); i-- > 0;) {
            if (s.roles[i] == TokenRole::Iou) iou_row = i;
            if (s.roles[i] == TokenRole::Mask) mask_row = i;
        }
        if (iou_row == s.roles.size() || mask_row == s.roles.size()) {
            throw ContractError("decode: token stream lost its iou or mask token");
        }

        auto up = rows_to_channels(s.image, s.h, s.w);
        up = gelu(upscale2(gelu(upscale1(up))));
        const std::size_t oh = up.dim(1), ow = up.dim(2);
        auto weights = hypernet(slice_rows(s.tokens, mask_row, mask_row + 1));  // [1, C/8]
        auto logits = reshape(matmul(channels_to_rows(up), transpose(weights)), Shape{oh, ow});
        DecodeResult<T> r;
        r.mask_logits = logits;
        r.mask = sigmoid(logits);
        r.iou_pred = reshape(sigmoid(iou_head(slice_rows(s.tokens, iou_row, iou_row + 1))), Shape{});
        return r;
    }
};

}  // namespace pasam::sam
