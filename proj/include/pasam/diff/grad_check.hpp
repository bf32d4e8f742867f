#pragma once

// Central-difference gradient oracle. Always runs in double precision so that
// float rounding in the model cannot be mistaken for a wrong gradient rule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "pasam/diff/tensor.hpp"

namespace pasam::diff {

namespace detail {

inline void check_eps(double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-3)) {
        throw ParameterError("grad_check eps must lie in [1e-6, 1e-3], got " + std::to_string(eps));
    }
}

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

inline double scalar_of(const Tensor<double>& y) {
    if (y.numel() != 1) throw ContractError("grad_check: function output has shape " + shape_str(y.shape()) + ", expected a scalar");
    return y.item();
}

}  // namespace detail

/// Max relative error between the tape gradient of f at x and central
/// differences, with denominator max(|analytic|, |numeric|, 1e-8).
template <class F>
double grad_check(F&& f, const Tensor<double>& x, double eps) {
    detail::check_eps(eps);
    Tensor<double> leaf(x.shape(), x.values(), true);
    Tensor<double> y = f(leaf);
    detail::scalar_of(y);
    y.backward();
    std::vector<double> analytic(x.numel(), 0.0);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        std::vector<double> plus(x.values()), minus(x.values());
        plus[i] += eps;
        minus[i] -= eps;
        const double fp = detail::scalar_of(f(Tensor<double>(x.shape(), std::move(plus))));
        const double fm = detail::scalar_of(f(Tensor<double>(x.shape(), std::move(minus))));
        worst = std::max(worst, detail::relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
    }
    return worst;
}

/// Same oracle over parameters held inside a closure. `loss` must rebuild the
/// graph from the current parameter values on every call. At most
/// `coords_per_param` coordinates per parameter are probed, chosen with `seed`.
inline double grad_check_params(const std::function<Tensor<double>()>& loss, std::vector<Tensor<double>> params,
                                double eps, std::size_t coords_per_param = 8, unsigned seed = 0) {
    detail::check_eps(eps);
    for (auto& p : params) {
        p.zero_grad();
        p.set_requires_grad(true);
    }
    Tensor<double> y = loss();
    detail::scalar_of(y);
    y.backward();

    std::mt19937 rng(seed);
    double worst = 0.0;
    for (auto& p : params) {
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        std::vector<std::size_t> coords(p.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(std::min(coords.size(), coords_per_param));
        for (auto i : coords) {
            auto data = p.mutable_data();
            const double orig = data[i];
            data[i] = orig + eps;
            const double fp = detail::scalar_of(loss());
            data[i] = orig - eps;
            const double fm = detail::scalar_of(loss());
            data[i] = orig;
            worst = std::max(worst, detail::relative_error(analytic[i], (fp - fm) / (2.0 * eps)));
        }
        p.zero_grad();
    }
    return worst;
}

}  // namespace pasam::diff
