#pragma once

// Freeze-then-adapt training: phase baseline trains the whole backbone with the
// adapter absent; phase adapter freezes the backbone and trains only the
// adapter and the mask-head upsampling stages.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pasam/model.hpp"
#include "pasam/training/adam.hpp"
#include "pasam/training/dataset.hpp"
#include "pasam/training/losses.hpp"
#include "pasam/training/metrics.hpp"

namespace pasam::training {

enum class Phase { Baseline, Adapter };

inline std::string to_string(Phase p) { return p == Phase::Baseline ? "baseline" : "adapter"; }

inline Phase parse_phase(const std::string& s) {
    if (s == "baseline") return Phase::Baseline;
    if (s == "adapter") return Phase::Adapter;
    throw ConfigError("unknown phase '" + s + "' (baseline|adapter)");
}

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 4;
    std::size_t epochs = 10;
    LossWeights weights;
    double iou_head_weight = 1.0;  // baseline phase only
    std::size_t uncertain_radius = 3;
    std::size_t metric_radius = 0;  // 0: 2% of the diagonal
    std::uint64_t seed = 0;
    bool eval_train = false;
    std::size_t max_steps = 0;  // 0: no cap

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (uncertain_radius < 1) throw ConfigError("uncertain_radius must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
    }
};

struct EpochLog {
    std::size_t epoch = 0;
    std::string split;
    double miou = 0, mbiou = 0, loss = 0;
};

struct EvalResult {
    double miou = 0, mbiou = 0, loss = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t steps = 0;
    std::vector<std::string> dead_parameters;  // trainable tensors with no nonzero gradient in epoch 1
};

namespace detail {

// Turns the tape off for every parameter for the lifetime of the guard.
template <class T>
class NoGrad {
public:
    explicit NoGrad(diff::ParamStore<T>& store) : store_(store) {
        for (auto& e : store_.entries()) {
            saved_.push_back(e.tensor.requires_grad());
            e.tensor.set_requires_grad(false);
        }
    }
    ~NoGrad() {
        for (std::size_t i = 0; i < saved_.size(); ++i) store_.entries()[i].tensor.set_requires_grad(saved_[i]);
    }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

private:
    diff::ParamStore<T>& store_;
    std::vector<bool> saved_;
};

}  // namespace detail

/// Loss of one forward pass given the sample's targets.
template <class T>
Tensor<T> sample_loss(const ForwardResult<T>& r, const Sample& s, const Tensor<T>& gt_uncertain, const LossWeights& w,
                      double iou_head_weight) {
    Tensor<T> m_pa, m_u;
    if (!r.intermediates.empty()) {
        m_pa = r.intermediates.back().masks.composed;
        m_u = r.intermediates.back().masks.uncertain;
    }
    auto loss = total_loss<T>(r.decoded.mask, m_pa, m_u, s.gt_mask, gt_uncertain, w);
    if (iou_head_weight != 0.0) {
        const std::size_t H = s.gt_mask.dim(1), W = s.gt_mask.dim(2);
        auto up = to_target_resolution(r.decoded.mask, H, W);
        const double actual = iou(threshold(up.data()), to_binary(s.gt_mask));
        auto err = diff::add_scalar(r.decoded.iou_pred, T(-actual));
        loss = diff::add(loss, diff::scale(diff::mul(err, err), T(iou_head_weight)));
    }
    return loss;
}

inline Tensor<float> uncertain_target(const Sample& s, std::size_t radius) {
    const std::size_t H = s.gt_mask.dim(1), W = s.gt_mask.dim(2);
    return from_binary(boundary_dilate(to_binary(s.gt_mask), H, W, radius), H, W);
}

/// Metrics on M_SAM (deterministic sampler), plus the mean training-objective loss.
inline EvalResult evaluate(Model<float>& model, const std::vector<Sample>& data, const TrainConfig& cfg, Phase phase) {
    detail::NoGrad<float> guard(model.params());
    MetricAccumulator acc;
    double loss = 0;
    const bool adapter = phase == Phase::Adapter && model.has_adapter();
    for (const auto& s : data) {
        ForwardOptions opt;
        opt.use_adapter = adapter;
        opt.mode = sampler::SamplerMode::InferDeterministic;
        auto r = model.forward(s.image, s.coarse_mask, s.prompts, opt);
        const std::size_t H = s.gt_mask.dim(1), W = s.gt_mask.dim(2);
        auto up = to_target_resolution(r.decoded.mask, H, W);
        const std::size_t d = cfg.metric_radius ? cfg.metric_radius : default_boundary_radius(H, W);
        acc.add(threshold(up.data()), to_binary(s.gt_mask), H, W, d);
        loss += sample_loss<float>(r, s, uncertain_target(s, cfg.uncertain_radius), cfg.weights,
                                   adapter ? 0.0 : cfg.iou_head_weight)
                    .item();
    }
    return {acc.miou(), acc.mbiou(), data.empty() ? 0.0 : loss / double(data.size())};
}

/// Trains in place. Phase adapter requires a model with an adapter whose
/// backbone already holds the baseline weights.
inline TrainResult train(Phase phase, Model<float>& model, const std::vector<Sample>& train_set,
                         const std::vector<Sample>& val_set, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_log = {}) {
    cfg.validate();
    if (train_set.empty()) throw InputError("training split is empty");
    const bool adapter = phase == Phase::Adapter;
    if (adapter && !model.has_adapter()) throw ConfigError("phase adapter needs a model with the adapter enabled");
    if (adapter) {
        model.set_trainable(false, true, true);
    } else {
        model.set_trainable(true, true, false);
    }

    // Frozen backbone: encoder outputs and edge maps are constants per sample.
    std::vector<Encoded<float>> cache;
    std::vector<Tensor<float>> edges, uncertain;
    for (const auto& s : train_set) uncertain.push_back(uncertain_target(s, cfg.uncertain_radius));
    if (adapter) {
        for (const auto& s : train_set) {
            cache.push_back(model.encode(s.image, s.coarse_mask));
            edges.push_back(adapter::image_gradient(s.image, model.config().adapter.edges));
        }
    }

    auto& store = model.params();
    Adam<float> opt(store, {cfg.learning_rate});
    TrainResult result;
    std::vector<bool> alive(store.entries().size(), false);
    std::vector<std::size_t> order(train_set.size());
    const double iou_w = adapter ? 0.0 : cfg.iou_head_weight;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, epoch, 2));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0;
        std::size_t seen = 0;
        bool capped = false;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const float inv = 1.0f / float(end - start);
            store.zero_grad();
            for (std::size_t b = start; b < end; ++b) {
                const auto& s = train_set[order[b]];
                ForwardOptions fo;
                fo.use_adapter = adapter;
                fo.mode = sampler::SamplerMode::TrainStochastic;
                fo.seed = mix_seed(mix_seed(cfg.seed, epoch, 3), b, 4);
                auto r = adapter ? model.decode(cache[order[b]], s.image, edges[order[b]], s.prompts, fo)
                                 : model.forward(s.image, s.coarse_mask, s.prompts, fo);
                const auto where = " at epoch " + std::to_string(epoch) + " step " + std::to_string(result.steps + 1);
                if (!r.decoded.mask.all_finite()) throw NumericError("non-finite prediction" + where);
                auto loss = sample_loss<float>(r, s, uncertain[order[b]], cfg.weights, iou_w);
                const float value = loss.item();
                if (!std::isfinite(value)) throw NumericError("non-finite loss" + where);
                loss_sum += value;
                ++seen;
                diff::scale(loss, inv).backward();
            }
            if (epoch == 1) {
                for (std::size_t k = 0; k < alive.size(); ++k) {
                    const auto& t = store.entries()[k].tensor;
                    if (t.has_grad() && std::any_of(t.grad().begin(), t.grad().end(), [](float g) { return g != 0.0f; }))
                        alive[k] = true;
                }
            }
            opt.step();
            ++result.steps;
            if (cfg.max_steps && result.steps >= cfg.max_steps) {
                capped = true;
                break;
            }
        }
        store.zero_grad();
        if (epoch == 1) {
            for (std::size_t k = 0; k < alive.size(); ++k)
                if (store.entries()[k].tensor.requires_grad() && !alive[k]) result.dead_parameters.push_back(store.entries()[k].name);
        }

        if (cfg.eval_train) {
            auto ev = evaluate(model, train_set, cfg, phase);
            result.log.push_back({epoch, "train", ev.miou, ev.mbiou, loss_sum / double(std::max<std::size_t>(seen, 1))});
            if (on_log) on_log(result.log.back());
        }
        if (!val_set.empty()) {
            auto ev = evaluate(model, val_set, cfg, phase);
            result.log.push_back({epoch, "val", ev.miou, ev.mbiou, ev.loss});
            if (on_log) on_log(result.log.back());
        }
        if (capped) break;
    }
    return result;
}

}  // namespace pasam::training
