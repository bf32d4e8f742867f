#pragma once

// Hard point mining: Gumbel top-k selection of grid cells from the mask
// triple, with straight-through gradients into the softmax relaxation.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pasam/adapter/mask_triple.hpp"
#include "pasam/diff/ops.hpp"
#include "pasam/sam/prompt_encoder.hpp"

namespace pasam::sampler {

using diff::Tensor;

enum class Polarity { Positive, Negative };
enum class SamplerMode { TrainStochastic, InferDeterministic };

/// Which soft distribution the straight-through rows carry in backward:
/// the per-step g^n (default) or the accumulated g'.
enum class StraightThrough { PerStep, Combined };

struct SamplerConfig {
    std::size_t n_sample = 4;
    double temperature = 1.0;
    Polarity polarity = Polarity::Positive;
    SamplerMode mode = SamplerMode::TrainStochastic;
    std::uint64_t rng_seed = 0;
    StraightThrough straight_through = StraightThrough::PerStep;

    void validate() const {
        if (!(temperature > 0.0)) throw ParameterError("sampler temperature must be positive");
    }
};

template <class T>
struct SamplerState {
    Tensor<T> phi0;                // initial guidance, [n]
    Tensor<T> gumbel_noise;        // gamma, [n]; zeros in deterministic mode
    std::vector<Tensor<T>> phi;    // phi^1..phi^N
    std::vector<Tensor<T>> g_steps;  // g^1..g^N
    Tensor<T> g_sum;               // g'
    Tensor<T> g_hat;               // [N, n]; one-hot rows in value
    std::vector<std::size_t> selected;
};

/// Positive: flatten(M_U * (M_R - M_C)); negative: flatten(M_U * (M_C - M_R)).
template <class T>
Tensor<T> init_guidance(const adapter::MaskTriple<T>& masks, Polarity polarity) {
    using namespace diff;
    if (masks.coarse.shape() != masks.refined.shape() || masks.coarse.shape() != masks.uncertain.shape()) {
        throw DimensionError("init_guidance: mask triple shapes disagree");
    }
    auto diffmask = polarity == Polarity::Positive ? sub(masks.refined, masks.coarse) : sub(masks.coarse, masks.refined);
    return flatten(mul(masks.uncertain, diffmask));
}

/// Draws i.i.d. Gumbel(0,1) noise from a generator owned by the call.
inline std::vector<double> gumbel_noise(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> out(n);
    for (auto& g : out) {
        double u = uni(rng);
        while (u <= 0.0) u = uni(rng);
        g = -std::log(-std::log(u));
    }
    return out;
}

template <class T>
SamplerState<T> gumbel_topk(const Tensor<T>& phi0, const SamplerConfig& cfg) {
    using namespace diff;
    cfg.validate();
    const std::size_t n = phi0.numel(), k = cfg.n_sample;
    if (k == 0 || k > n) {
        throw ContractError("gumbel_topk needs 1 <= n_sample <= n, got n_sample=" + std::to_string(k) +
                            " n=" + std::to_string(n));
    }
    const T tau = static_cast<T>(cfg.temperature);
    const bool stochastic = cfg.mode == SamplerMode::TrainStochastic;

    SamplerState<T> st;
    st.phi0 = flatten(phi0);
    std::vector<T> noise(n, T(0));
    if (stochastic) {
        auto g = gumbel_noise(n, cfg.rng_seed);
        for (std::size_t i = 0; i < n; ++i) noise[i] = static_cast<T>(g[i]);
    }
    st.gumbel_noise = Tensor<T>(Shape{n}, noise);

    std::vector<bool> taken(n, false);
    auto phi = add(st.phi0, st.gumbel_noise);
    for (std::size_t step = 0; step < k; ++step) {
        if (step > 0) {
            const auto& prev = st.g_steps.back();
            phi = add(phi, log(one_minus(clamp(prev, T(0), T(1) - T(1e-7)))));
        }
        st.phi.push_back(phi);
        st.g_steps.push_back(softmax(phi, tau));
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (best == n || phi.values()[i] > phi.values()[best]) best = i;
        }
        taken[best] = true;
        st.selected.push_back(best);
    }
    st.g_sum = st.g_steps.front();
    for (std::size_t s = 1; s < st.g_steps.size(); ++s) st.g_sum = add(st.g_sum, st.g_steps[s]);

    if (!stochastic) st.selected = top_k_indices(phi0, k);

    std::vector<Tensor<T>> rows;
    for (std::size_t s = 0; s < k; ++s) {
        auto hard = one_hot<T>(st.selected[s], n);
        if (!stochastic) {
            rows.push_back(reshape(hard, Shape{1, n}));
            continue;
        }
        const auto& soft = cfg.straight_through == StraightThrough::PerStep ? st.g_steps[s] : st.g_sum;
        // (soft - sg(soft)) is exactly zero in value, so the row stays exactly one-hot.
        rows.push_back(reshape(add(hard, sub(soft, stop_gradient(soft))), Shape{1, n}));
    }
    st.g_hat = rows.size() == 1 ? rows.front() : concat(rows, 0);
    return st;
}

/// Positional part of the sampled tokens (used as their query embedding).
template <class T>
Tensor<T> sampled_positional(const std::vector<std::size_t>& selected, std::size_t h, std::size_t w, std::size_t c) {
    std::vector<T> pe;
    for (auto idx : selected) {
        auto v = positional_encoding<T>((static_cast<double>(idx % w) + 0.5) / static_cast<double>(w),
                                        (static_cast<double>(idx / w) + 0.5) / static_cast<double>(h), c);
        pe.insert(pe.end(), v.begin(), v.end());
    }
    return Tensor<T>(Shape{selected.size(), c}, std::move(pe));
}

/// One token per sampled cell: (g_hat row) x flattened x_pa, plus the cell-center
/// positional encoding, plus the polarity label embedding ([1,C]).
template <class T>
Tensor<T> sample_point_tokens(const SamplerState<T>& state, const Tensor<T>& x_pa, const Tensor<T>& label_embedding) {
    using namespace diff;
    if (x_pa.rank() != 3) throw DimensionError("sample_point_tokens: x_pa must be [C,h,w], got " + shape_str(x_pa.shape()));
    const std::size_t c = x_pa.dim(0), h = x_pa.dim(1), w = x_pa.dim(2);
    if (state.g_hat.dim(1) != h * w) {
        throw DimensionError("sample_point_tokens: sampler grid of " + std::to_string(state.g_hat.dim(1)) +
                             " cells vs x_pa " + shape_str(x_pa.shape()));
    }
    if (label_embedding.numel() != c) throw DimensionError("sample_point_tokens: label embedding width mismatch");
    const std::size_t n = state.selected.size();
    auto gathered = matmul(state.g_hat, channels_to_rows(x_pa));  // [N, C]
    auto label_rows = matmul(Tensor<T>::full(Shape{n, 1}, T(1)), reshape(label_embedding, Shape{1, c}));
    return add(add(gathered, sampled_positional<T>(state.selected, h, w, c)), label_rows);
}

}  // namespace pasam::sampler
