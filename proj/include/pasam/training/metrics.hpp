#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "pasam/training/morphology.hpp"

namespace pasam::training {

/// Boundary band radius: 2% of the image diagonal, at least one pixel.
inline std::size_t default_boundary_radius(std::size_t h, std::size_t w) {
    const double d = 0.02 * std::sqrt(double(h * h + w * w));
    return std::max<std::size_t>(1, std::size_t(std::lround(d)));
}

inline double iou(const BinaryMask& pred, const BinaryMask& gt) {
    if (pred.size() != gt.size()) throw DimensionError("iou: mask sizes differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += (pred[i] && gt[i]) ? 1 : 0;
        uni += (pred[i] || gt[i]) ? 1 : 0;
    }
    if (uni == 0) return 1.0;  // both empty
    return double(inter) / double(uni);
}

/// IoU restricted to R = band(gt) U band(pred), band = boundary_dilate(., d).
/// With nothing of either mask inside R the score is 1 when the masks agree
/// everywhere and 0 otherwise.
inline double boundary_iou(const BinaryMask& pred, const BinaryMask& gt, std::size_t h, std::size_t w, std::size_t d) {
    if (pred.size() != h * w || gt.size() != h * w) throw DimensionError("boundary_iou: mask sizes differ");
    const auto bp = boundary_dilate(pred, h, w, d), bg = boundary_dilate(gt, h, w, d);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!(bp[i] || bg[i])) continue;
        inter += (pred[i] && gt[i]) ? 1 : 0;
        uni += (pred[i] || gt[i]) ? 1 : 0;
    }
    if (uni == 0) return pred == gt ? 1.0 : 0.0;
    return double(inter) / double(uni);
}

inline BinaryMask threshold(std::span<const float> probs, float t = 0.5f) {
    BinaryMask out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] > t ? 1 : 0;
    return out;
}

/// Running dataset averages of per-sample IoU and boundary IoU.
struct MetricAccumulator {
    double iou_sum = 0, biou_sum = 0;
    std::size_t count = 0;

    void add(const BinaryMask& pred, const BinaryMask& gt, std::size_t h, std::size_t w, std::size_t d) {
        iou_sum += iou(pred, gt);
        biou_sum += boundary_iou(pred, gt, h, w, d);
        ++count;
    }
    double miou() const { return count ? iou_sum / double(count) : 0.0; }
    double mbiou() const { return count ? biou_sum / double(count) : 0.0; }
};

}  // namespace pasam::training
