#pragma once

#include <cmath>
#include <vector>

#include "pasam/diff/nn.hpp"

namespace pasam::training {

struct AdamConfig {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Adam over the trainable entries of a parameter store. Entries with
/// requires_grad off are never touched, not even re-written with equal values.
template <class T>
class Adam {
public:
    Adam(diff::ParamStore<T>& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
        if (!(cfg_.lr > 0.0)) throw ConfigError("learning rate must be positive");
        for (const auto& e : store_.entries()) {
            m_.emplace_back(e.tensor.numel(), 0.0);
            v_.emplace_back(e.tensor.numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_)), c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        auto& entries = store_.entries();
        for (std::size_t k = 0; k < entries.size(); ++k) {
            auto& p = entries[k].tensor;
            if (!p.requires_grad() || !p.has_grad()) continue;
            auto g = p.grad();
            auto data = p.mutable_data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gi = double(g[i]);
                m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
                data[i] = static_cast<T>(double(data[i]) - cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps));
            }
        }
    }

    std::size_t steps() const { return t_; }

private:
    diff::ParamStore<T>& store_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

}  // namespace pasam::training
