// Acceptance gate: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset; exit status is nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "../common.hpp"
#include "../oracles.hpp"
#include "pasam/diff/grad_check.hpp"
#include "pasam/harness/commands.hpp"
#include "pasam/sampler/gumbel_topk.hpp"
#include "pasam/training/trainer.hpp"

using namespace pasam;
using namespace testing_util;
using namespace testing_util::oracles;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1: gradient suite

TD weighted_sum(const TD& y) {
    std::mt19937 rng(1234 + static_cast<unsigned>(y.numel()));
    auto w = random_tensor(y.shape(), rng);
    return diff::sum(diff::mul(y, w));
}

std::size_t rand_dim(std::mt19937& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double op_suite_worst(int instance) {
    using namespace diff;
    std::mt19937 rng(100 + instance);
    const double eps = 1e-5;
    double worst = 0;
    auto check = [&](auto&& f, const TD& x) { worst = std::max(worst, grad_check(f, x, eps)); };
    const std::size_t m = rand_dim(rng, 1, 6), n = rand_dim(rng, 1, 6), k = rand_dim(rng, 1, 6);

    auto a = random_tensor({m, n}, rng), b = random_tensor({m, n}, rng);
    check([&](const TD& x) { return weighted_sum(add(x, b)); }, a);
    check([&](const TD& x) { return weighted_sum(sub(b, x)); }, a);
    check([&](const TD& x) { return weighted_sum(mul(x, b)); }, a);
    check([&](const TD& x) { return weighted_sum(mul(x, x)); }, a);
    check([&](const TD& x) { return weighted_sum(mul(b, sum(x))); }, a);
    check([&](const TD& x) { return weighted_sum(scale(x, 2.5)); }, a);
    check([&](const TD& x) { return weighted_sum(sigmoid(x)); }, a);
    check([&](const TD& x) { return weighted_sum(gelu(x)); }, a);
    check([&](const TD& x) { return weighted_sum(exp(x)); }, a);
    check([&](const TD& x) { return weighted_sum(one_minus(x)); }, a);
    auto pos = random_tensor({m, n}, rng, 0.2, 2.0);
    check([&](const TD& x) { return weighted_sum(log(x)); }, pos);
    check([&](const TD& x) { return weighted_sum(clamp(x, 0.1, 1.5)); }, pos);
    check([&](const TD& x) { return weighted_sum(reciprocal(x)); }, pos);
    check([&](const TD& x) { return mean(x); }, a);
    check([&](const TD& x) { return weighted_sum(mean_rows(x)); }, a);

    auto c = random_tensor({n, k}, rng);
    check([&](const TD& x) { return weighted_sum(matmul(x, c)); }, a);
    check([&](const TD& x) { return weighted_sum(matmul(a, x)); }, c);
    check([&](const TD& x) { return weighted_sum(transpose(x)); }, a);
    auto bias = random_tensor({k}, rng);
    check([&](const TD& x) { return weighted_sum(linear(a, c, x)); }, bias);
    check([&](const TD& x) { return weighted_sum(linear(a, x, bias)); }, c);

    auto v = random_tensor({n}, rng, -2, 2);
    const double tau = std::uniform_real_distribution<double>(0.3, 2.0)(rng);
    check([&](const TD& x) { return weighted_sum(softmax(x, tau)); }, v);
    check([&](const TD& x) { return weighted_sum(softmax_rows(x, 0.6)); }, a);

    auto wide = random_tensor({m, n + 1}, rng);
    auto gain = random_tensor({n + 1}, rng), lnb = random_tensor({n + 1}, rng);
    check([&](const TD& x) { return weighted_sum(layer_norm_rows(x, gain, lnb)); }, wide);
    check([&](const TD& x) { return weighted_sum(layer_norm_rows(wide, x, lnb)); }, gain);
    check([&](const TD& x) { return weighted_sum(layer_norm_rows(wide, gain, x)); }, lnb);

    check([&](const TD& x) { return weighted_sum(reshape(x, {m * n})); }, a);
    check([&](const TD& x) { return weighted_sum(concat<double>({x, b, x}, 0)); }, a);
    check([&](const TD& x) { return weighted_sum(concat<double>({b, x}, 1)); }, a);
    check([&](const TD& x) { return weighted_sum(gather_rows(x, {0, m - 1, 0})); }, a);
    check([&](const TD& x) { return weighted_sum(slice_rows(x, 0, m)); }, a);
    check([&](const TD& x) { return weighted_sum(slice_cols(x, n - 1, n)); }, a);
    auto rows = random_tensor({1, n}, rng);
    check([&](const TD& x) { return weighted_sum(index_put_rows(x, rows, {m - 1}, false)); }, a);
    check([&](const TD& x) { return weighted_sum(index_put_rows(a, x, {0}, true)); }, rows);

    const std::size_t ci = rand_dim(rng, 1, 3), co = rand_dim(rng, 1, 3), h = rand_dim(rng, 3, 7), w = rand_dim(rng, 3, 7);
    auto img = random_tensor({ci, h, w}, rng);
    auto ker = random_tensor({co, ci, 3, 3}, rng);
    auto cb = random_tensor({co}, rng);
    const std::size_t stride = rand_dim(rng, 1, 2);
    check([&](const TD& x) { return weighted_sum(conv2d(x, ker, cb, stride, 1)); }, img);
    check([&](const TD& x) { return weighted_sum(conv2d(img, x, cb, stride, 1)); }, ker);
    check([&](const TD& x) { return weighted_sum(conv2d(img, ker, x, stride, 1)); }, cb);
    auto tker = random_tensor({ci, co, 2, 2}, rng);
    check([&](const TD& x) { return weighted_sum(conv_transpose2d(x, tker, 2)); }, img);
    check([&](const TD& x) { return weighted_sum(conv_transpose2d(img, x, 2)); }, tker);
    check([&](const TD& x) { return weighted_sum(upsample_bilinear(x, 2 * h + 1, 3 * w)); }, img);
    check([&](const TD& x) { return weighted_sum(channels_to_rows(x)); }, img);
    return worst;
}

double end_to_end_worst(Model<double>& m, const ForwardOptions& opt) {
    auto img = random_image<double>(32, 9);
    auto mask = square_mask<double>(32, 6, 22);
    auto prompts = some_prompts(32);
    std::vector<diff::Tensor<double>> params;
    for (auto& e : m.params().entries()) params.push_back(e.tensor);
    auto loss = [&] { return diff::mean(m.forward(img, mask, prompts, opt).decoded.mask); };
    return diff::grad_check_params(loss, params, 1e-5, 3, 17);
}

Outcome gradient_suite() {
    Outcome o;
    const auto t0 = Clock::now();
    double ops = 0;
    for (int i = 0; i < 5; ++i) ops = std::max(ops, op_suite_worst(i));
    o.require(ops < 1e-3, "op max rel err " + fmt("%.3g", ops) + " >= 1e-3");

    double e2e = 0;
    {
        Model<double> m(micro_config(false));
        e2e = std::max(e2e, end_to_end_worst(m, {}));
    }
    {
        Model<double> m(micro_config(true, 0));
        std::mt19937 rng(4);
        std::uniform_real_distribution<double> d(-0.2, 0.2);
        for (auto& e : m.params().entries())
            if (e.group == diff::ParamGroup::Adapter)
                for (auto& v : e.tensor.mutable_data()) v += d(rng);
        e2e = std::max(e2e, end_to_end_worst(m, {}));
    }
    {
        Model<double> m(micro_config(true, 1));
        for (auto& e : m.params().entries())
            if (e.name.find("_out.") != std::string::npos)
                for (auto& v : e.tensor.mutable_data()) v = 0.05;
        ForwardOptions opt;
        opt.mode = sampler::SamplerMode::InferDeterministic;
        e2e = std::max(e2e, end_to_end_worst(m, opt));
    }
    o.require(e2e < 1e-2, "end-to-end max rel err " + fmt("%.3g", e2e) + " >= 1e-2");
    const double secs = seconds_since(t0);
    o.require(secs < 120, "runtime " + fmt("%.0f", secs) + " s");
    o.note("ops " + fmt("%.2e", ops) + ", end-to-end " + fmt("%.2e", e2e) + ", " + fmt("%.1f", secs) + " s");
    return o;
}

// ---- 2: composition identities

Outcome composition_identities() {
    Outcome o;
    std::mt19937 rng(21);
    double worst_c = 0, worst_r = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = rand_dim(rng, 1, 12), w = rand_dim(rng, 1, 12);
        auto c = random_tensor({h, w}, rng, 0.0, 1.0), r = random_tensor({h, w}, rng, 0.0, 1.0);
        auto closed = adapter::make_triple(c, r, TD::zeros({h, w}));
        auto open = adapter::make_triple(c, r, TD::full({h, w}, 1.0));
        for (std::size_t i = 0; i < h * w; ++i) {
            worst_c = std::max(worst_c, std::abs(closed.composed.data()[i] - c.data()[i]));
            worst_r = std::max(worst_r, std::abs(open.composed.data()[i] - r.data()[i]));
        }
    }
    o.require(worst_c <= 1e-6, "M_U=0 deviation " + fmt("%.3g", worst_c));
    o.require(worst_r <= 1e-6, "M_U=1 deviation " + fmt("%.3g", worst_r));
    o.note("100 triples, max deviation " + fmt("%.2e", std::max(worst_c, worst_r)));
    return o;
}

// ---- 3: straight-through

sampler::SamplerConfig sampler_config(std::size_t n, double tau, sampler::SamplerMode mode, std::uint64_t seed) {
    sampler::SamplerConfig c;
    c.n_sample = n;
    c.temperature = tau;
    c.mode = mode;
    c.rng_seed = seed;
    return c;
}

// Gradient of sum(W * g_hat) against central differences of sum_n W[n] . g^n(phi), noise fixed.
double straight_through_error(unsigned seed) {
    std::mt19937 rng(seed);
    const std::size_t n = 9, k = 3;
    auto phi = random_tensor({n}, rng, -1, 1);
    auto w = random_tensor({k, n}, rng);
    auto cfg = sampler_config(k, 0.8, sampler::SamplerMode::TrainStochastic, seed);
    cfg.straight_through = sampler::StraightThrough::PerStep;

    TD leaf(phi.shape(), phi.values(), true);
    auto st = sampler::gumbel_topk(leaf, cfg);
    diff::sum(diff::mul(st.g_hat, w)).backward();
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());

    auto surrogate = [&](const std::vector<double>& p) {
        auto s = sampler::gumbel_topk(TD({n}, p), cfg);
        double acc = 0;
        for (std::size_t r = 0; r < k; ++r)
            for (std::size_t j = 0; j < n; ++j) acc += w.at({r, j}) * s.g_steps[r].at(j);
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

Outcome straight_through() {
    Outcome o;
    std::size_t rows = 0, bad_rows = 0;
    for (unsigned s = 0; s < 50; ++s) {
        std::mt19937 rng(s);
        const std::size_t n = rand_dim(rng, 4, 64), k = rand_dim(rng, 1, std::min<std::size_t>(n, 8));
        auto phi = random_tensor({n}, rng, -3, 3);
        auto mode = s % 2 ? sampler::SamplerMode::TrainStochastic : sampler::SamplerMode::InferDeterministic;
        TD leaf(phi.shape(), phi.values(), true);
        auto st = sampler::gumbel_topk(leaf, sampler_config(k, 0.5 + 0.05 * s, mode, s));
        for (std::size_t r = 0; r < k; ++r, ++rows) {
            std::size_t ones = 0, zeros = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = st.g_hat.at({r, j});
                ones += v == 1.0;
                zeros += v == 0.0;
            }
            if (ones != 1 || zeros != n - 1) ++bad_rows;
        }
    }
    o.require(bad_rows == 0, std::to_string(bad_rows) + " of " + std::to_string(rows) + " rows not one-hot");
    double worst = 0;
    for (unsigned s = 0; s < 10; ++s) worst = std::max(worst, straight_through_error(s));
    o.require(worst < 1e-3, "backward rel err " + fmt("%.3g", worst));
    o.note(std::to_string(rows) + " one-hot rows, backward rel err " + fmt("%.2e", worst));
    return o;
}

// ---- 4: Gumbel-max statistics

Outcome gumbel_statistics() {
    Outcome o;
    const auto t0 = Clock::now();
    const double expected = std::exp(2.0) / (std::exp(2.0) + 3.0);
    TD phi({4}, {2, 0, 0, 0});
    const int draws = 100000;
    int hits = 0;
    for (int s = 0; s < draws; ++s)
        if (sampler::gumbel_topk(phi, sampler_config(1, 1.0, sampler::SamplerMode::TrainStochastic, std::uint64_t(s))).selected[0] == 0)
            ++hits;
    const double freq = double(hits) / draws, secs = seconds_since(t0);
    o.require(std::abs(freq - expected) <= 0.02, "frequency off by " + fmt("%.4f", freq - expected));
    o.require(secs < 60, "runtime " + fmt("%.0f", secs) + " s");
    o.note("freq " + fmt("%.4f", freq) + " vs " + fmt("%.4f", expected) + ", " + fmt("%.1f", secs) + " s");
    return o;
}

// ---- 5: distinctness

Outcome distinctness() {
    Outcome o;
    std::size_t duplicates = 0;
    std::mt19937 rng(5);
    auto phi = random_tensor({64}, rng, -2, 2);
    for (std::size_t n : {2u, 4u, 8u})
        for (int s = 0; s < 10000; ++s) {
            auto st = sampler::gumbel_topk(phi, sampler_config(n, 1.0, sampler::SamplerMode::TrainStochastic, std::uint64_t(s)));
            std::set<std::size_t> uniq(st.selected.begin(), st.selected.end());
            if (st.selected.size() != n || uniq.size() != n) ++duplicates;
        }
    o.require(duplicates == 0, std::to_string(duplicates) + " draws with repeated indices");
    o.note("30000 draws over n_sample 2/4/8");
    return o;
}

// ---- 6: residual and freeze contracts

std::vector<std::vector<unsigned char>> snapshot(const diff::ParamStore<float>& store, diff::ParamGroup group) {
    std::vector<std::vector<unsigned char>> out;
    for (const auto& e : store.entries()) {
        if (e.group != group) continue;
        auto d = e.tensor.data();
        out.emplace_back(reinterpret_cast<const unsigned char*>(d.data()),
                         reinterpret_cast<const unsigned char*>(d.data() + d.size()));
    }
    return out;
}

Outcome residual_and_freeze() {
    Outcome o;
    ModelConfig base_cfg;
    base_cfg.init_seed = 5;
    auto adapted_cfg = base_cfg;
    adapted_cfg.adapter_enabled = true;
    adapted_cfg.adapter.n_sample = 0;
    Model<float> base(base_cfg), adapted(adapted_cfg);
    std::size_t differing = 0;
    for (unsigned s = 0; s < 5; ++s) {
        auto img = random_image<float>(128, s);
        auto mask = square_mask<float>(128, 20 + 5 * s, 80 + 5 * s);
        auto a = base.forward(img, mask, some_prompts(128), {});
        auto b = adapted.forward(img, mask, some_prompts(128), {});
        if (a.decoded.mask.numel() != b.decoded.mask.numel() ||
            std::memcmp(a.decoded.mask.data().data(), b.decoded.mask.data().data(), a.decoded.mask.numel() * sizeof(float)) ||
            a.decoded.iou_pred.item() != b.decoded.iou_pred.item())
            ++differing;
    }
    o.require(differing == 0, std::to_string(differing) + " of 5 zero-adapter forwards differ from baseline");

    training::GeometryConfig g;
    g.resolution = 32;
    auto data = training::generate_dataset(8, g, 1);
    Model<float> model(micro_config(true, 2));
    const auto frozen = snapshot(model.params(), diff::ParamGroup::Backbone);
    training::TrainConfig cfg;
    cfg.batch_size = 1;
    cfg.epochs = 100;
    cfg.max_steps = 100;
    auto r = training::train(training::Phase::Adapter, model, data, {}, cfg);
    o.require(r.steps == 100, "ran " + std::to_string(r.steps) + " steps");
    o.require(snapshot(model.params(), diff::ParamGroup::Backbone) == frozen, "frozen parameters changed");
    o.note("5 bitwise forwards, 100 frozen steps");
    return o;
}

// ---- 7: metric oracles

Outcome metric_oracles() {
    Outcome o;
    std::mt19937 rng(9);
    std::size_t instances = 0, mismatches = 0;
    for (const auto& [h, w, m] : crafted_masks()) {
        for (long d : {1L, 2L, 3L, 5L}) {
            ++instances;
            if (training::boundary_dilate(m, h, w, d) != oracle_band(m, h, w, d)) ++mismatches;
        }
        Mask flip = m;
        for (auto& v : flip)
            if (std::uniform_real_distribution<double>(0, 1)(rng) < 0.15) v = !v;
        auto other = random_mask(h, w, 0.4, rng);
        for (long d : {1L, 2L, 4L}) {
            training::MetricAccumulator acc;
            double iou_sum = 0, biou_sum = 0;
            for (const Mask* p : {static_cast<const Mask*>(&m), static_cast<const Mask*>(&flip), static_cast<const Mask*>(&other)}) {
                acc.add(*p, m, h, w, d);
                iou_sum += oracle_ratio(*p, m, nullptr);
                biou_sum += oracle_biou(*p, m, h, w, d);
                ++instances;
                if (training::iou(*p, m) != oracle_ratio(*p, m, nullptr)) ++mismatches;
                if (training::boundary_iou(*p, m, h, w, d) != oracle_biou(*p, m, h, w, d)) ++mismatches;
            }
            if (acc.miou() != iou_sum / 3.0 || acc.mbiou() != biou_sum / 3.0) ++mismatches;
        }
    }
    o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
    o.note(std::to_string(instances) + " crafted instances");
    return o;
}

// ---- 8: directional training result

constexpr std::size_t kSamples = 2000;  // last fifth held out, as gen-data does
constexpr std::size_t kBaselineEpochs = 10;  // val mBIoU plateaus by about epoch 8 at this size
constexpr std::size_t kAdapterEpochs = 4;

double final_val_mbiou(const training::TrainResult& r) {
    for (auto it = r.log.rbegin(); it != r.log.rend(); ++it)
        if (it->split == "val") return it->mbiou;
    throw ContractError("no validation row");
}

Outcome directional_result() {
    Outcome o;
    double gain_sum = 0, sampled_sum = 0, unsampled_sum = 0, main_secs = 0;
    std::size_t sampled_wins = 0;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        training::GeometryConfig g;
        auto all = training::generate_dataset(kSamples, g, seed);
        const std::size_t n_val = kSamples / 5;
        std::vector<training::Sample> train_set(all.begin(), all.end() - n_val), val_set(all.end() - n_val, all.end());

        ModelConfig mc;
        mc.init_seed = seed;
        training::TrainConfig tc;
        tc.seed = seed;
        tc.epochs = kBaselineEpochs;
        auto t0 = Clock::now();
        Model<float> base(mc);
        const double base_mbiou = final_val_mbiou(training::train(training::Phase::Baseline, base, train_set, val_set, tc));

        auto run_adapter = [&](std::size_t n_sample) {
            auto ac = mc;
            ac.adapter_enabled = true;
            ac.adapter.n_sample = n_sample;
            Model<float> m(ac);
            m.load_backbone(base.params());
            auto c = tc;
            c.epochs = kAdapterEpochs;
            return final_val_mbiou(training::train(training::Phase::Adapter, m, train_set, val_set, c));
        };
        const double sampled = run_adapter(4);
        main_secs += seconds_since(t0);
        const double unsampled = run_adapter(0);

        gain_sum += sampled - base_mbiou;
        sampled_sum += sampled;
        unsampled_sum += unsampled;
        sampled_wins += sampled >= unsampled;
        std::printf("  seed %llu: baseline %.4f, adapter N=4 %.4f, adapter N=0 %.4f\n", (unsigned long long)seed, base_mbiou,
                    sampled, unsampled);
        std::fflush(stdout);
    }
    const double gain = 100.0 * gain_sum / 3.0;
    o.require(gain >= 2.0, "mean mBIoU gain " + fmt("%.2f", gain) + " points < 2.0");
    o.require(main_secs < 1800, "baseline+adapter runtime " + fmt("%.0f", main_secs) + " s");
    o.note("gain " + fmt("%+.2f", gain) + " points, " + fmt("%.0f", main_secs) + " s");
    o.note("N=4 vs N=0 (non-gating): " + fmt("%.4f", sampled_sum / 3) + " vs " + fmt("%.4f", unsampled_sum / 3) + ", N=4 ahead on " +
           std::to_string(sampled_wins) + "/3 seeds");
    return o;
}

// ---- 9: reproducibility

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome reproducibility() {
    Outcome o;
    const auto root = fs::temp_directory_path() / ("pasam_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    std::ostringstream sink;
    harness::gen_data({20, (root / "data").string(), 3, 128}, sink);

    harness::TrainOptions t;
    t.phase = "baseline";
    t.data = (root / "data").string();
    t.overrides = {"epochs=2", "n_sample=4"};
    t.out = (root / "base").string();
    t.seed = 11;
    auto base = harness::train_command(t, sink);
    t.phase = "adapter";
    t.baseline = base.checkpoint;
    t.out = (root / "adapter").string();
    auto adapter = harness::train_command(t, sink);

    for (const auto* run : {&base, &adapter}) {
        std::vector<std::string> logs;
        for (int k = 0; k < 2; ++k) {
            harness::TrainOptions replay;
            replay.manifest = run->manifest;
            replay.out = (root / ("replay" + std::to_string(logs.size()) + "_" + fs::path(run->log).parent_path().filename().string())).string();
            logs.push_back(slurp(harness::train_command(replay, sink).log));
        }
        const auto name = fs::path(run->log).parent_path().filename().string();
        o.require(!logs[0].empty() && logs[0] == logs[1], name + " replays differ");
        o.require(logs[0] == slurp(run->log), name + " replay differs from the original run");
    }
    fs::remove_all(root);
    o.note("baseline and adapter manifests replayed twice each");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"composition identities", composition_identities},
        {"straight-through hardness", straight_through},
        {"Gumbel-max statistics", gumbel_statistics},
        {"distinctness", distinctness},
        {"residual and freeze contracts", residual_and_freeze},
        {"metric oracles", metric_oracles},
        {"directional training result", directional_result},
        {"reproducibility", reproducibility},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("threw: ") + e.what();
        }
        failed += !o.pass;
        std::printf("criterion %d %s: %s (%s)\n", id, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
