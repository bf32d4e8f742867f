#pragma once

#include <cmath>
#include <vector>

#include "pasam/diff/nn.hpp"

namespace pasam::sam {

using diff::Tensor;

/// Multi-head scaled dot-product attention with learned projections.
/// `with_output` = false drops the output projection (the value projection
/// then maps straight to the model width).
template <class T>
struct Attention {
    diff::Linear<T> q, k, v, o;
    std::size_t heads = 1;
    bool with_output = true;

    Attention() = default;
    Attention(diff::Builder<T> b, std::size_t width, std::size_t heads_, bool with_output_ = true)
        : q(b.scope("q"), width, width),
          k(b.scope("k"), width, width),
          v(b.scope("v"), width, width),
          heads(heads_),
          with_output(with_output_) {
        if (with_output) o = diff::Linear<T>(b.scope("o"), width, width);
    }

    /// Row-stochastic attention weights per head, [n_q, n_k] each.
    std::vector<Tensor<T>> weights(const Tensor<T>& query, const Tensor<T>& key) const {
        auto qp = q(query), kp = k(key);
        const std::size_t width = qp.dim(1), dh = width / heads;
        std::vector<Tensor<T>> out;
        for (std::size_t h = 0; h < heads; ++h) {
            auto qh = heads == 1 ? qp : diff::slice_cols(qp, h * dh, (h + 1) * dh);
            auto kh = heads == 1 ? kp : diff::slice_cols(kp, h * dh, (h + 1) * dh);
            out.push_back(diff::softmax_rows(diff::matmul(qh, diff::transpose(kh)), T(1) / std::sqrt(T(dh))));
        }
        return out;
    }

    Tensor<T> operator()(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value) const {
        auto attn = weights(query, key);
        auto vp = v(value);
        const std::size_t dh = vp.dim(1) / heads;
        std::vector<Tensor<T>> parts;
        for (std::size_t h = 0; h < heads; ++h) {
            auto vh = heads == 1 ? vp : diff::slice_cols(vp, h * dh, (h + 1) * dh);
            parts.push_back(diff::matmul(attn[h], vh));
        }
        auto merged = heads == 1 ? parts.front() : diff::concat(parts, 1);
        return with_output ? o(merged) : merged;
    }
};

}  // namespace pasam::sam
