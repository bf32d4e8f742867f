#pragma once

#include <random>
#include <string>
#include <vector>

#include "pasam/model.hpp"

namespace testing_util {

using pasam::Shape;
using TD = pasam::diff::Tensor<double>;

inline TD random_tensor(Shape shape, std::mt19937& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(pasam::shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return TD(std::move(shape), std::move(v));
}

// 32x32 input, 2x2 decoder grid, narrow channels: small enough for
// finite-difference checks over every parameter tensor.
inline pasam::ModelConfig micro_config(bool adapter, std::size_t n_sample = 0) {
    pasam::ModelConfig cfg;
    cfg.sam.image_size = 32;
    cfg.sam.encoder_widths = {4, 8, 16};
    cfg.sam.mask_encoder_widths = {2, 4, 8};
    cfg.sam.decoder.channels = 16;
    cfg.sam.decoder.heads = 2;
    cfg.sam.decoder.mlp_width = 32;
    cfg.adapter_enabled = adapter;
    cfg.adapter.n_sample = n_sample;
    cfg.init_seed = 11;
    return cfg;
}

inline pasam::Prompts some_prompts(double size) {
    pasam::Prompts p;
    p.points.push_back({0.4 * size, 0.55 * size, true});
    p.points.push_back({0.8 * size, 0.2 * size, false});
    p.box = pasam::BoxPrompt{0.1 * size, 0.15 * size, 0.9 * size, 0.85 * size};
    return p;
}

template <class T>
pasam::diff::Tensor<T> random_image(std::size_t size, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    std::vector<T> v(3 * size * size);
    for (auto& x : v) x = static_cast<T>(d(rng));
    return pasam::diff::Tensor<T>(Shape{3, size, size}, std::move(v));
}

template <class T>
pasam::diff::Tensor<T> square_mask(std::size_t size, std::size_t lo, std::size_t hi) {
    std::vector<T> v(size * size, T(0));
    for (std::size_t y = lo; y < hi; ++y)
        for (std::size_t x = lo; x < hi; ++x) v[y * size + x] = T(1);
    return pasam::diff::Tensor<T>(Shape{1, size, size}, std::move(v));
}

template <class T>
void zero_biases(pasam::diff::ParamStore<T>& store) {
    for (auto& e : store.entries()) {
        const auto& n = e.name;
        if (n.size() >= 4 && n.compare(n.size() - 4, 4, "bias") == 0) {
            for (auto& x : e.tensor.mutable_data()) x = T(0);
        }
    }
}

}  // namespace testing_util
