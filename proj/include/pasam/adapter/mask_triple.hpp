#pragma once

#include "pasam/diff/ops.hpp"

namespace pasam::adapter {

using diff::Tensor;

/// Coarse, refined and uncertain masks on the decoder grid, plus their
/// uncertainty-weighted composition.
template <class T>
struct MaskTriple {
    Tensor<T> coarse;     // M_C, [h,w]
    Tensor<T> refined;    // M_R
    Tensor<T> uncertain;  // M_U
    Tensor<T> composed;   // M_PA
};

/// M_PA = M_U * M_R + (1 - M_U) * M_C, elementwise.
template <class T>
Tensor<T> compose_masks(const Tensor<T>& coarse, const Tensor<T>& refined, const Tensor<T>& uncertain) {
    using namespace diff;
    return add(mul(uncertain, refined), mul(one_minus(uncertain), coarse));
}

template <class T>
MaskTriple<T> make_triple(Tensor<T> coarse, Tensor<T> refined, Tensor<T> uncertain) {
    if (coarse.shape() != refined.shape() || coarse.shape() != uncertain.shape()) {
        throw DimensionError("mask triple shapes disagree: " + shape_str(coarse.shape()) + ", " +
                             shape_str(refined.shape()) + ", " + shape_str(uncertain.shape()));
    }
    auto composed = compose_masks(coarse, refined, uncertain);
    return {std::move(coarse), std::move(refined), std::move(uncertain), std::move(composed)};
}

}  // namespace pasam::adapter
