#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "common.hpp"
#include "pasam/sampler/gumbel_topk.hpp"

using namespace pasam;
using namespace pasam::sampler;
using namespace testing_util;
using diff::Tensor;

namespace {

SamplerConfig config(std::size_t n, double tau, SamplerMode mode, std::uint64_t seed = 0) {
    SamplerConfig c;
    c.n_sample = n;
    c.temperature = tau;
    c.mode = mode;
    c.rng_seed = seed;
    return c;
}

adapter::MaskTriple<double> triple(std::vector<double> c, std::vector<double> r, std::vector<double> u) {
    const std::size_t n = c.size();
    return adapter::make_triple(TD({1, n}, c), TD({1, n}, r), TD({1, n}, u));
}

}  // namespace

TEST(InitGuidance, WorkedExample) {
    auto phi = init_guidance(triple({0.2, 0.3}, {0.9, 0.1}, {1.0, 1.0}), Polarity::Positive);
    EXPECT_NEAR(phi.at(0), 0.7, 1e-15);
    EXPECT_NEAR(phi.at(1), -0.2, 1e-15);
    EXPECT_EQ(phi.shape(), (Shape{2}));
}

TEST(InitGuidance, VanishesWhenMasksAgreeOrGateIsClosed) {
    for (auto pol : {Polarity::Positive, Polarity::Negative}) {
        auto agree = init_guidance(triple({0.3, 0.6}, {0.3, 0.6}, {0.8, 0.2}), pol);
        auto closed = init_guidance(triple({0.1, 0.6}, {0.9, 0.2}, {0.0, 0.0}), pol);
        for (double v : agree.data()) EXPECT_EQ(v, 0.0);
        for (double v : closed.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(InitGuidance, SwappingMasksExchangesPolarities) {
    std::mt19937 rng(2);
    auto c = random_tensor({3, 3}, rng, 0, 1), r = random_tensor({3, 3}, rng, 0, 1), u = random_tensor({3, 3}, rng, 0, 1);
    auto a = init_guidance(adapter::make_triple(c, r, u), Polarity::Positive);
    auto b = init_guidance(adapter::make_triple(r, c, u), Polarity::Negative);
    EXPECT_EQ(a.values(), b.values());
}

TEST(GumbelTopK, DeterministicArgmax) {
    TD phi({4}, {0.7, -0.2, 0.0, 0.1});
    auto st = gumbel_topk(phi, config(1, 1.0, SamplerMode::InferDeterministic));
    ASSERT_EQ(st.selected.size(), 1u);
    EXPECT_EQ(st.selected[0], 0u);
    auto st3 = gumbel_topk(phi, config(3, 1.0, SamplerMode::InferDeterministic));
    EXPECT_EQ(st3.selected, (std::vector<std::size_t>{0, 3, 2}));
    for (double g : st3.gumbel_noise.data()) EXPECT_EQ(g, 0.0);
}

TEST(GumbelTopK, GumbelMaxFrequency) {
    // Oracle: the Gumbel-max trick samples index i with probability softmax(phi)_i.
    const double expected = std::exp(2.0) / (std::exp(2.0) + 3.0);
    EXPECT_NEAR(expected, 0.711234594227593859942, 1e-15);
    TD phi({4}, {2, 0, 0, 0});
    const int draws = 100000;
    int hits = 0;
    for (int s = 0; s < draws; ++s) {
        if (gumbel_topk(phi, config(1, 1.0, SamplerMode::TrainStochastic, std::uint64_t(s))).selected[0] == 0) ++hits;
    }
    EXPECT_NEAR(double(hits) / draws, expected, 0.02);
}

TEST(GumbelTopK, PairsAreDistinct) {
    TD phi({4}, {0.3, 0.1, -0.4, 0.2});
    for (int s = 0; s < 10000; ++s) {
        auto st = gumbel_topk(phi, config(2, 1.0, SamplerMode::TrainStochastic, std::uint64_t(s)));
        ASSERT_NE(st.selected[0], st.selected[1]) << "seed " << s;
    }
}

TEST(GumbelTopK, RowsAreExactlyOneHotAndStepsNormalized) {
    std::mt19937 rng(4);
    auto phi = random_tensor({16}, rng, -2, 2);
    for (auto mode : {SamplerMode::TrainStochastic, SamplerMode::InferDeterministic})
        for (auto st_mode : {StraightThrough::PerStep, StraightThrough::Combined}) {
            auto cfg = config(5, 0.7, mode, 3);
            cfg.straight_through = st_mode;
            TD leaf(phi.shape(), phi.values(), true);
            auto st = gumbel_topk(leaf, cfg);
            ASSERT_EQ(st.g_hat.shape(), (Shape{5, 16}));
            for (std::size_t r = 0; r < 5; ++r)
                for (std::size_t j = 0; j < 16; ++j)
                    EXPECT_EQ(st.g_hat.at({r, j}), j == st.selected[r] ? 1.0 : 0.0);
            for (const auto& g : st.g_steps) {
                double s = 0;
                for (double v : g.data()) s += v;
                EXPECT_NEAR(s, 1.0, 1e-6);
            }
            std::set<std::size_t> uniq(st.selected.begin(), st.selected.end());
            EXPECT_EQ(uniq.size(), 5u);
        }
}

namespace {

// Analytic gradient of L = sum(W * g_hat) against central differences of the
// surrogate sum_n W[n] . g^n(phi), with noise (the seed) held fixed.
double straight_through_error(StraightThrough mode, unsigned seed) {
    std::mt19937 rng(seed);
    const std::size_t n = 9, k = 3;
    auto phi = random_tensor({n}, rng, -1, 1);
    auto w = random_tensor({k, n}, rng);
    auto cfg = config(k, 0.8, SamplerMode::TrainStochastic, seed);
    cfg.straight_through = mode;

    TD leaf(phi.shape(), phi.values(), true);
    auto st = gumbel_topk(leaf, cfg);
    diff::sum(diff::mul(st.g_hat, w)).backward();
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

    auto surrogate = [&](const std::vector<double>& p) {
        auto s = gumbel_topk(TD({n}, p), cfg);
        double acc = 0;
        for (std::size_t r = 0; r < k; ++r) {
            const auto& g = mode == StraightThrough::PerStep ? s.g_steps[r] : s.g_sum;
            for (std::size_t j = 0; j < n; ++j) acc += w.at({r, j}) * g.at(j);
        }
        return acc;
    };
    double worst = 0;
    const double eps = 1e-5;
    for (std::size_t i = 0; i < n; ++i) {
        auto plus = phi.values(), minus = phi.values();
        plus[i] += eps;
        minus[i] -= eps;
        const double numeric = (surrogate(plus) - surrogate(minus)) / (2 * eps);
        worst = std::max(worst, std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8}));
    }
    return worst;
}

}  // namespace

TEST(GumbelTopK, StraightThroughMatchesSoftPathPerStep) {
    for (unsigned s = 0; s < 5; ++s) EXPECT_LT(straight_through_error(StraightThrough::PerStep, s), 1e-3);
}

TEST(GumbelTopK, StraightThroughMatchesSoftPathCombined) {
    for (unsigned s = 0; s < 5; ++s) EXPECT_LT(straight_through_error(StraightThrough::Combined, s), 1e-3);
}

TEST(GumbelTopK, LogSuppressionAtLowTemperature) {
    // Previous mass above 0.99: the next step puts under 1e-3 on that index.
    for (double tau : {0.25, 0.1}) {
        TD phi({4}, {2.0, 0.0, 0.1, -0.3});
        auto st = gumbel_topk(phi, config(2, tau, SamplerMode::InferDeterministic));
        ASSERT_GT(st.g_steps[0].at(0), 0.99);
        EXPECT_LT(st.g_steps[1].at(0), 1e-3) << "tau " << tau;
    }
}

TEST(GumbelTopK, LogSuppressionIsWeakAtUnitTemperature) {
    // At tau = 1 the subtracted log(1 - g) is not enough on its own; the
    // previous index keeps the largest logit and hard exclusion is what
    // keeps selections distinct.
    TD phi({4}, {6.0, 0.0, 0.0, 0.0});
    auto st = gumbel_topk(phi, config(2, 1.0, SamplerMode::InferDeterministic));
    ASSERT_GT(st.g_steps[0].at(0), 0.99);
    EXPECT_GT(st.g_steps[1].at(0), 0.4);
    EXPECT_GT(st.phi[1].at(0), st.phi[1].at(1));
    EXPECT_NE(st.selected[1], 0u);
}

TEST(GumbelTopK, SeedDeterminism) {
    std::mt19937 rng(6);
    auto phi = random_tensor({20}, rng);
    auto a = gumbel_topk(phi, config(4, 1.0, SamplerMode::TrainStochastic, 77));
    auto b = gumbel_topk(phi, config(4, 1.0, SamplerMode::TrainStochastic, 77));
    auto c = gumbel_topk(phi, config(4, 1.0, SamplerMode::TrainStochastic, 78));
    EXPECT_EQ(a.selected, b.selected);
    EXPECT_EQ(a.g_hat.values(), b.g_hat.values());
    EXPECT_NE(a.gumbel_noise.values(), c.gumbel_noise.values());
}

TEST(GumbelTopK, Errors) {
    TD phi({3}, {1, 2, 3});
    EXPECT_THROW(gumbel_topk(phi, config(4, 1.0, SamplerMode::TrainStochastic)), ContractError);
    EXPECT_THROW(gumbel_topk(phi, config(0, 1.0, SamplerMode::TrainStochastic)), ContractError);
    EXPECT_THROW(gumbel_topk(phi, config(1, 0.0, SamplerMode::TrainStochastic)), ParameterError);
}

TEST(SamplePointTokens, OneHotGatherAndCount) {
    std::mt19937 rng(7);
    auto x = random_tensor({6, 3, 4}, rng);
    auto label = random_tensor({1, 6}, rng);
    auto phi = random_tensor({12}, rng);
    auto st = gumbel_topk(phi, config(3, 1.0, SamplerMode::TrainStochastic, 5));
    auto tokens = sample_point_tokens(st, x, label);
    ASSERT_EQ(tokens.shape(), (Shape{3, 6}));
    for (std::size_t r = 0; r < 3; ++r) {
        const std::size_t j = st.selected[r];
        auto pe = positional_encoding<double>((double(j % 4) + 0.5) / 4.0, (double(j / 4) + 0.5) / 3.0, 6);
        for (std::size_t c = 0; c < 6; ++c) {
            const double gathered = tokens.at({r, c}) - pe[c] - label.at({0, c});
            EXPECT_NEAR(gathered, x.at({c, j / 4, j % 4}), 1e-12);
        }
    }
}

TEST(SamplePointTokens, GridMismatchIsDimensionError) {
    std::mt19937 rng(8);
    auto st = gumbel_topk(random_tensor({12}, rng), config(2, 1.0, SamplerMode::TrainStochastic));
    EXPECT_THROW(sample_point_tokens(st, random_tensor({4, 4, 4}, rng), random_tensor({1, 4}, rng)), DimensionError);
}

TEST(SamplePointTokens, GradientReachesUncertainMaskThroughGuidance) {
    std::mt19937 rng(9);
    const std::size_t h = 3, w = 3, c = 4, k = 2;
    auto coarse = random_tensor({h, w}, rng, 0.05, 0.95), refined = random_tensor({h, w}, rng, 0.05, 0.95);
    auto u0 = random_tensor({h, w}, rng, 0.05, 0.95);
    auto x = random_tensor({c, h, w}, rng);
    auto label = random_tensor({1, c}, rng);
    auto cfg = config(k, 1.0, SamplerMode::TrainStochastic, 12);

    TD u(u0.shape(), u0.values(), true);
    auto st = gumbel_topk(init_guidance(adapter::make_triple(coarse, refined, u), Polarity::Positive), cfg);
    diff::sum(sample_point_tokens(st, x, label)).backward();
    ASSERT_TRUE(u.has_grad());
    EXPECT_TRUE(std::any_of(u.grad().begin(), u.grad().end(), [](double v) { return v != 0.0; }));

    // Soft surrogate: replace each one-hot row by its g^n.
    auto column_sums = std::vector<double>(h * w, 0.0);
    for (std::size_t j = 0; j < h * w; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) column_sums[j] += x.data()[ch * h * w + j];
    auto surrogate = [&](const std::vector<double>& uv) {
        auto s = gumbel_topk(init_guidance(adapter::make_triple(coarse, refined, TD({h, w}, uv)), Polarity::Positive), cfg);
        double acc = 0;
        for (const auto& g : s.g_steps)
            for (std::size_t j = 0; j < h * w; ++j) acc += g.at(j) * column_sums[j];
        return acc;
    };
    for (std::size_t i = 0; i < h * w; ++i) {
        auto plus = u0.values(), minus = u0.values();
        plus[i] += 1e-5;
        minus[i] -= 1e-5;
        const double numeric = (surrogate(plus) - surrogate(minus)) / 2e-5;
        EXPECT_NEAR(u.grad()[i], numeric, 1e-6 + 1e-4 * std::abs(numeric));
    }
}
