#pragma once

// Dense prompt compensation: the guide encoder W_g over [I, grad I] and the two
// consistent-representation variants that fuse it into the decoder feature.

#include <string>
#include <vector>

#include "pasam/diff/nn.hpp"
#include "pasam/sam/attention.hpp"
#include "pasam/sam/image_encoder.hpp"

namespace pasam::adapter {

using diff::Tensor;

enum class CrmKind { GuidedGate, CrossAttention };

inline std::string to_string(CrmKind k) { return k == CrmKind::GuidedGate ? "guided_gate" : "cross_attention"; }

inline CrmKind parse_crm(const std::string& s) {
    if (s == "guided_gate") return CrmKind::GuidedGate;
    if (s == "cross_attention") return CrmKind::CrossAttention;
    throw ConfigError("unknown crm '" + s + "' (guided_gate|cross_attention)");
}

/// W_g: channel-concatenated image and edge map [4,H,W] -> guide [C,H/16,W/16].
template <class T>
struct GuideEncoder {
    sam::StridedEncoder<T> net;

    GuideEncoder() = default;
    GuideEncoder(diff::Builder<T> b, std::size_t channels) : net(b, 4, {8, 16, 32}, channels) {}

    Tensor<T> operator()(const Tensor<T>& image, const Tensor<T>& edges) const {
        return net(diff::concat<T>({image, edges}, 0));
    }
};

namespace detail {
template <class T>
void require_same(const Tensor<T>& guide, const Tensor<T>& x, const char* who) {
    if (guide.shape() != x.shape() || x.rank() != 3) {
        throw DimensionError(std::string(who) + ": guide " + shape_str(guide.shape()) + " vs feature " + shape_str(x.shape()));
    }
}
}  // namespace detail

/// x_pa = x + sigmoid(conv1x1_gate(guide)) * conv1x1_inject(guide).
template <class T>
struct GuidedGate {
    diff::Conv<T> gate, inject;

    GuidedGate() = default;
    GuidedGate(diff::Builder<T> b, std::size_t channels)
        : gate(b.scope("gate"), channels, channels, 1, 1, 0), inject(b.scope("inject"), channels, channels, 1, 1, 0) {}

    Tensor<T> operator()(const Tensor<T>& guide, const Tensor<T>& x) const {
        detail::require_same(guide, x, "crm_guided_gate");
        return diff::add(x, diff::mul(diff::sigmoid(gate(guide)), inject(guide)));
    }
};

/// x_pa = x + Attention(q = x, k = guide, v = guide) over flattened cells,
/// single head, scale 1/sqrt(C).
template <class T>
struct CrossAttentionCrm {
    sam::Attention<T> attn;

    CrossAttentionCrm() = default;
    CrossAttentionCrm(diff::Builder<T> b, std::size_t channels) : attn(b.scope("attn"), channels, 1, false) {}

    Tensor<T> operator()(const Tensor<T>& guide, const Tensor<T>& x) const {
        detail::require_same(guide, x, "crm_cross_attention");
        const std::size_t h = x.dim(1), w = x.dim(2);
        auto xr = diff::channels_to_rows(x), gr = diff::channels_to_rows(guide);
        return diff::rows_to_channels(diff::add(xr, attn(xr, gr, gr)), h, w);
    }
};

template <class T>
struct Crm {
    CrmKind kind = CrmKind::GuidedGate;
    GuidedGate<T> gate;
    CrossAttentionCrm<T> cross;

    Crm() = default;
    Crm(diff::Builder<T> b, std::size_t channels, CrmKind kind_) : kind(kind_) {
        if (kind == CrmKind::GuidedGate) {
            gate = GuidedGate<T>(b.scope("gate"), channels);
        } else {
            cross = CrossAttentionCrm<T>(b.scope("cross"), channels);
        }
    }

    Tensor<T> operator()(const Tensor<T>& guide, const Tensor<T>& x) const {
        return kind == CrmKind::GuidedGate ? gate(guide, x) : cross(guide, x);
    }
};

}  // namespace pasam::adapter
