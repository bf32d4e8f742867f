#pragma once

#include "pasam/diff/ops.hpp"

namespace pasam::training {

using diff::Tensor;

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* who) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(who) + ": prediction " + shape_str(a.shape()) + " vs target " + shape_str(b.shape()));
    }
}

/// -mean[t log p + (1-t) log(1-p)] with p clamped to [1e-7, 1-1e-7].
template <class T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    using namespace diff;
    require_same_shape(pred, target, "bce_loss");
    auto p = clamp(pred, T(1e-7), T(1) - T(1e-7));
    auto ll = add(mul(target, log(p)), mul(one_minus(target), log(one_minus(p))));
    return scale(mean(ll), T(-1));
}

/// 1 - (2 sum(p t) + 1) / (sum(p) + sum(t) + 1).
template <class T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    using namespace diff;
    require_same_shape(pred, target, "dice_loss");
    auto num = add_scalar(scale(sum(mul(pred, target)), T(2)), T(1));
    auto den = add_scalar(add(sum(pred), sum(target)), T(1));
    return one_minus(mul(num, reciprocal(den)));
}

struct LossWeights {
    double sam = 1.0, pa = 1.0, uncertain = 1.0;
};

/// Upsamples a [h,w] or [1,h,w] probability map to [1,H,W].
template <class T>
Tensor<T> to_target_resolution(const Tensor<T>& m, std::size_t H, std::size_t W) {
    auto c = m.rank() == 2 ? diff::reshape(m, Shape{1, m.dim(0), m.dim(1)}) : m;
    if (c.dim(1) == H && c.dim(2) == W) return c;
    return diff::upsample_bilinear(c, H, W);
}

/// w_sam (bce+dice)(M_SAM) + w_pa (bce+dice)(M_PA) + w_u bce(M_U, uncertain GT).
/// Predictions are bilinearly resized to the target resolution first. An
/// undefined M_PA / M_U (no adapter) drops those terms.
template <class T>
Tensor<T> total_loss(const Tensor<T>& m_sam, const Tensor<T>& m_pa, const Tensor<T>& m_u, const Tensor<T>& gt,
                     const Tensor<T>& gt_uncertain, const LossWeights& w) {
    using namespace diff;
    const std::size_t H = gt.dim(1), W = gt.dim(2);
    auto sam = to_target_resolution(m_sam, H, W);
    auto loss = scale(add(bce_loss(sam, gt), dice_loss(sam, gt)), T(w.sam));
    if (m_pa.defined() && w.pa != 0.0) {
        auto pa = to_target_resolution(m_pa, H, W);
        loss = add(loss, scale(add(bce_loss(pa, gt), dice_loss(pa, gt)), T(w.pa)));
    }
    if (m_u.defined() && w.uncertain != 0.0) {
        loss = add(loss, scale(bce_loss(to_target_resolution(m_u, H, W), gt_uncertain), T(w.uncertain)));
    }
    return loss;
}

}  // namespace pasam::training
