#pragma once

// Named parameter storage and the handful of layers the model is built from.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pasam/diff/ops.hpp"

namespace pasam::diff {

/// Ownership tag used by the freeze-then-adapt protocol.
enum class ParamGroup {
    Backbone,   // frozen in the adapter phase
    Upsampler,  // backbone mask-head upsampling stages; trained in both phases
    Adapter,    // exists only when the prompt adapter is enabled
};

inline const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Backbone: return "backbone";
        case ParamGroup::Upsampler: return "upsampler";
        case ParamGroup::Adapter: return "adapter";
    }
    return "?";
}

template <class T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamGroup group;
        Tensor<T> tensor;
    };

    Tensor<T> add(std::string name, Tensor<T> init, ParamGroup group) {
        for (const auto& e : entries_) {
            if (e.name == name) throw ContractError("duplicate parameter name " + name);
        }
        init.set_requires_grad(true);
        entries_.push_back({std::move(name), group, init});
        return init;
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    const Entry* find(const std::string& name) const {
        for (const auto& e : entries_)
            if (e.name == name) return &e;
        return nullptr;
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

private:
    std::vector<Entry> entries_;
};

/// Copies values by name; both stores must hold the same parameter set.
template <class Dst, class Src>
void copy_parameters(const ParamStore<Src>& src, ParamStore<Dst>& dst) {
    for (auto& e : dst.entries()) {
        const auto* s = src.find(e.name);
        if (!s || s->tensor.shape() != e.tensor.shape()) {
            throw CompatibilityError("parameter " + e.name + " missing or reshaped in source store");
        }
        auto out = e.tensor.mutable_data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Dst>(s->tensor.data()[i]);
    }
}

/// Registers parameters under a name prefix with a fixed group and a shared RNG.
template <class T>
class Builder {
public:
    Builder(ParamStore<T>& store, std::mt19937_64& rng, std::string prefix, ParamGroup group)
        : store_(store), rng_(rng), prefix_(std::move(prefix)), group_(group) {}

    Builder scope(const std::string& sub) const { return Builder(store_, rng_, prefix_ + sub + ".", group_); }
    Builder with_group(ParamGroup g) const { return Builder(store_, rng_, prefix_, g); }

    Tensor<T> uniform(const std::string& name, Shape shape, double bound) {
        std::uniform_real_distribution<double> dist(-bound, bound);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(dist(rng_));
        return store_.add(prefix_ + name, Tensor<T>(std::move(shape), std::move(v)), group_);
    }

    Tensor<T> normal(const std::string& name, Shape shape, double stddev) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<T> v(shape_numel(shape));
        for (auto& x : v) x = static_cast<T>(dist(rng_));
        return store_.add(prefix_ + name, Tensor<T>(std::move(shape), std::move(v)), group_);
    }

    Tensor<T> constant(const std::string& name, Shape shape, T value) {
        return store_.add(prefix_ + name, Tensor<T>::full(std::move(shape), value), group_);
    }

    std::mt19937_64& rng() { return rng_; }

private:
    ParamStore<T>& store_;
    std::mt19937_64& rng_;
    std::string prefix_;
    ParamGroup group_;
};

template <class T>
struct Linear {
    Tensor<T> weight;  // [in, out]
    Tensor<T> bias;    // [out]

    Linear() = default;
    Linear(Builder<T> b, std::size_t in, std::size_t out, bool zero_init = false) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        weight = zero_init ? b.constant("weight", {in, out}, T(0)) : b.uniform("weight", {in, out}, bound);
        bias = zero_init ? b.constant("bias", {out}, T(0)) : b.uniform("bias", {out}, bound);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <class T>
struct LayerNorm {
    Tensor<T> gain, bias;

    LayerNorm() = default;
    LayerNorm(Builder<T> b, std::size_t width) {
        gain = b.constant("gain", {width}, T(1));
        bias = b.constant("bias", {width}, T(0));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_rows(x, gain, bias); }
};

/// Two-layer perceptron with GELU in between.
template <class T>
struct Mlp {
    Linear<T> fc1, fc2;

    Mlp() = default;
    Mlp(Builder<T> b, std::size_t in, std::size_t hidden, std::size_t out)
        : fc1(b.scope("fc1"), in, hidden), fc2(b.scope("fc2"), hidden, out) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return fc2(gelu(fc1(x))); }
};

template <class T>
struct Conv {
    Tensor<T> kernel;  // [out, in, k, k]
    Tensor<T> bias;
    std::size_t stride = 1, padding = 0;

    Conv() = default;
    Conv(Builder<T> b, std::size_t in, std::size_t out, std::size_t k, std::size_t stride_, std::size_t padding_,
         bool zero_init = false)
        : stride(stride_), padding(padding_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
        kernel = zero_init ? b.constant("kernel", {out, in, k, k}, T(0)) : b.uniform("kernel", {out, in, k, k}, bound);
        bias = zero_init ? b.constant("bias", {out}, T(0)) : b.uniform("bias", {out}, bound);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, kernel, bias, stride, padding); }
};

template <class T>
struct ConvTranspose {
    Tensor<T> kernel;  // [in, out, k, k]
    Tensor<T> bias;
    std::size_t stride = 2;

    ConvTranspose() = default;
    ConvTranspose(Builder<T> b, std::size_t in, std::size_t out, std::size_t k, std::size_t stride_) : stride(stride_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        kernel = b.uniform("kernel", {in, out, k, k}, bound);
        bias = b.uniform("bias", {out}, bound);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        return add_channel_bias(conv_transpose2d(x, kernel, stride), bias);
    }
};

}  // namespace pasam::diff
